use std::collections::VecDeque;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clock::SimClock;
use super::lcg;
use crate::emv::{Un, MAC_LEN};

pub const COUNTER_BITS: u32 = 15;
pub const COUNTER_MODULUS: u64 = 1 << COUNTER_BITS;
/// Bits 31 and 23..20, forced to zero by characteristic C.
pub const CHAR_C_MASK: u32 = 0x80F0_0000;

/// Anything a terminal can draw UNs from.
pub trait UnSource {
    fn next_un(&mut self, clock: &SimClock) -> Un;

    /// Lets sources that mix in transaction data see each ARQC.
    fn observe_arqc(&mut self, _mac: &[u8; MAC_LEN]) {}

    /// Power cycle at the clock's current time.
    fn reboot(&mut self, _clock: &SimClock) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    CounterPrefix,
    CharC,
    TruncLcg,
    TimeSeeded,
    Book4Suggested,
    Strong,
    Scripted,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GeneratorKind::CounterPrefix => "COUNTER_PREFIX",
            GeneratorKind::CharC => "CHAR_C",
            GeneratorKind::TruncLcg => "TRUNC_LCG",
            GeneratorKind::TimeSeeded => "TIME_SEEDED",
            GeneratorKind::Book4Suggested => "BOOK4_SUGGESTED",
            GeneratorKind::Strong => "STRONG",
            GeneratorKind::Scripted => "SCRIPTED",
        };
        f.write_str(s)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pure form of the counter UN: prefix in the top 17 bits, tick count below.
pub fn counter_prefix_un(prefix17: u32, tick_us: u64, now_us: u64) -> Un {
    assert!(tick_us > 0, "tick must be positive");
    let count = (now_us / tick_us) % COUNTER_MODULUS;
    Un(((prefix17 & 0x1_FFFF) << COUNTER_BITS) | count as u32)
}

/// Free-running tick counter behind a fixed 17-bit prefix.
///
/// Tick boundary `i` sits at `i·tick + δᵢ − phase`, with δᵢ uniform in
/// ±jitter·tick drawn from a hash of (jitter seed, i). Boundaries never drift,
/// so the counter stays on its nominal rate over any horizon.
#[derive(Clone, Debug)]
pub struct CounterPrefix {
    pub prefix17: u32,
    pub tick_us: u64,
    pub phase_us: u64,
    pub jitter: f64,
    jitter_seed: u64,
}

impl CounterPrefix {
    pub fn new(prefix17: u32, tick_us: u64, phase_us: u64, jitter: f64, jitter_seed: u64) -> Self {
        assert!(tick_us > 0, "tick must be positive");
        assert!((0.0..0.5).contains(&jitter), "jitter must be in [0, 0.5)");
        CounterPrefix {
            prefix17: prefix17 & 0x1_FFFF,
            tick_us,
            phase_us,
            jitter,
            jitter_seed,
        }
    }

    fn boundary(&self, i: u64) -> f64 {
        let nominal = (i as f64) * self.tick_us as f64;
        if self.jitter == 0.0 || i == 0 {
            return nominal;
        }
        let u = (splitmix64(self.jitter_seed ^ i.wrapping_mul(0xA24B_AED4_963E_E407)) >> 11) as f64
            / (1u64 << 53) as f64;
        nominal + (2.0 * u - 1.0) * self.jitter * self.tick_us as f64
    }

    /// Absolute tick count at `now_us` (not reduced modulo the counter width).
    pub fn ticks_at(&self, now_us: u64) -> u64 {
        let t = now_us + self.phase_us;
        let i0 = t / self.tick_us;
        if self.jitter == 0.0 {
            return i0;
        }
        let tf = t as f64;
        [i0 + 1, i0]
            .into_iter()
            .find(|&i| self.boundary(i) <= tf)
            .unwrap_or(i0.saturating_sub(1))
    }

    pub fn un_at(&self, now_us: u64) -> Un {
        let count = self.ticks_at(now_us) % COUNTER_MODULUS;
        Un((self.prefix17 << COUNTER_BITS) | count as u32)
    }
}

/// Strong 32 bits with bit 31 and the third nibble zeroed.
pub fn char_c_postprocess(raw: u32) -> Un {
    Un(raw & !CHAR_C_MASK)
}

pub fn char_c_predicate(un: Un) -> bool {
    un.0 & CHAR_C_MASK == 0
}

/// UN suggested by EMV Book 4: hash of the XOR of retained ARQCs, the
/// transaction counter and the time in whole seconds.
pub fn book4_un(prev_arqcs: &[[u8; MAC_LEN]], txn_counter: u32, now_s: u64) -> Un {
    let mut folded = [0u8; MAC_LEN];
    for mac in prev_arqcs {
        for (f, b) in folded.iter_mut().zip(mac) {
            *f ^= b;
        }
    }
    let digest = Sha256::new()
        .chain_update(folded)
        .chain_update(txn_counter.to_be_bytes())
        .chain_update(now_s.to_be_bytes())
        .finalize();
    Un(u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]]))
}

#[derive(Clone, Debug)]
pub struct Book4Suggested {
    retained: VecDeque<[u8; MAC_LEN]>,
    capacity: usize,
    pub txn_counter: u32,
}

impl Book4Suggested {
    pub fn new(capacity: usize, txn_counter: u32) -> Self {
        Book4Suggested {
            retained: VecDeque::with_capacity(capacity),
            capacity,
            txn_counter,
        }
    }

    pub fn retained(&self) -> Vec<[u8; MAC_LEN]> {
        self.retained.iter().copied().collect()
    }
}

/// Strong RNG seeded from the real-time clock at power-up.
#[derive(Clone, Debug)]
pub struct TimeSeeded {
    pub rtc_epoch_s: u64,
    pub rtc_battery: bool,
    rng: ChaCha20Rng,
}

impl TimeSeeded {
    pub fn new(rtc_epoch_s: u64, rtc_battery: bool, clock: &SimClock) -> Self {
        let mut g = TimeSeeded {
            rtc_epoch_s,
            rtc_battery,
            rng: ChaCha20Rng::seed_from_u64(0),
        };
        g.reboot(clock);
        g
    }

    /// RTC reading the generator is seeded with when booting at `clock`.
    pub fn boot_seed(&self, clock: &SimClock) -> u64 {
        if self.rtc_battery {
            self.rtc_epoch_s + clock.now_s()
        } else {
            self.rtc_epoch_s
        }
    }

    pub fn stream(boot_seed: u64, count: usize) -> Vec<Un> {
        let mut rng = ChaCha20Rng::seed_from_u64(boot_seed);
        (0..count).map(|_| Un(rng.next_u32())).collect()
    }
}

impl UnSource for TimeSeeded {
    fn next_un(&mut self, _clock: &SimClock) -> Un {
        Un(self.rng.next_u32())
    }

    fn reboot(&mut self, clock: &SimClock) {
        self.rng = ChaCha20Rng::seed_from_u64(self.boot_seed(clock));
    }
}

/// Fixed list of UNs replayed in order, wrapping at the end.
#[derive(Clone, Debug)]
pub struct Scripted {
    values: Vec<Un>,
    pos: usize,
}

impl Scripted {
    pub fn new(values: Vec<Un>) -> Self {
        assert!(!values.is_empty(), "scripted source needs at least one value");
        Scripted { values, pos: 0 }
    }
}

/// Every generator family, as held by a terminal.
#[derive(Clone, Debug)]
pub enum UnGenerator {
    CounterPrefix(CounterPrefix),
    CharC(ChaCha20Rng),
    TruncLcg { state: u32 },
    TimeSeeded(TimeSeeded),
    Book4(Book4Suggested),
    Strong(ChaCha20Rng),
    Scripted(Scripted),
}

impl UnGenerator {
    pub fn strong(seed: u64) -> Self {
        UnGenerator::Strong(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn char_c(seed: u64) -> Self {
        UnGenerator::CharC(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn trunc_lcg(seed: u32) -> Self {
        UnGenerator::TruncLcg {
            state: seed & lcg::STATE_MASK,
        }
    }

    pub fn kind(&self) -> GeneratorKind {
        match self {
            UnGenerator::CounterPrefix(_) => GeneratorKind::CounterPrefix,
            UnGenerator::CharC(_) => GeneratorKind::CharC,
            UnGenerator::TruncLcg { .. } => GeneratorKind::TruncLcg,
            UnGenerator::TimeSeeded(_) => GeneratorKind::TimeSeeded,
            UnGenerator::Book4(_) => GeneratorKind::Book4Suggested,
            UnGenerator::Strong(_) => GeneratorKind::Strong,
            UnGenerator::Scripted(_) => GeneratorKind::Scripted,
        }
    }
}

impl UnSource for UnGenerator {
    fn next_un(&mut self, clock: &SimClock) -> Un {
        match self {
            UnGenerator::CounterPrefix(c) => c.un_at(clock.now_us()),
            UnGenerator::CharC(rng) => char_c_postprocess(rng.next_u32()),
            UnGenerator::TruncLcg { state } => lcg::next_un(state),
            UnGenerator::TimeSeeded(g) => g.next_un(clock),
            UnGenerator::Book4(g) => {
                let un = book4_un(&g.retained(), g.txn_counter, clock.now_s());
                g.txn_counter = g.txn_counter.wrapping_add(1);
                un
            }
            UnGenerator::Strong(rng) => Un(rng.next_u32()),
            UnGenerator::Scripted(s) => {
                let un = s.values[s.pos % s.values.len()];
                s.pos += 1;
                un
            }
        }
    }

    fn observe_arqc(&mut self, mac: &[u8; MAC_LEN]) {
        if let UnGenerator::Book4(g) = self {
            if g.capacity == 0 {
                return;
            }
            if g.retained.len() == g.capacity {
                g.retained.pop_front();
            }
            g.retained.push_back(*mac);
        }
    }

    fn reboot(&mut self, clock: &SimClock) {
        match self {
            UnGenerator::TimeSeeded(g) => g.reboot(clock),
            UnGenerator::Book4(g) => g.retained.clear(),
            _ => {}
        }
    }
}

/// Generator settings as written in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    CounterPrefix {
        prefix: u32,
        #[serde(default = "default_tick_ms")]
        tick_ms: f64,
        #[serde(default)]
        jitter: f64,
    },
    CharC,
    TruncLcg,
    TimeSeeded {
        #[serde(default = "default_rtc_epoch")]
        rtc_epoch_s: u64,
        #[serde(default)]
        rtc_battery: bool,
    },
    Book4Suggested {
        #[serde(default = "default_retained")]
        retained: usize,
    },
    Strong,
}

fn default_tick_ms() -> f64 {
    3.3
}

fn default_rtc_epoch() -> u64 {
    1_309_305_600 // 2011-06-29T00:00:00Z
}

fn default_retained() -> usize {
    4
}

impl GeneratorConfig {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            GeneratorConfig::CounterPrefix { .. } => GeneratorKind::CounterPrefix,
            GeneratorConfig::CharC => GeneratorKind::CharC,
            GeneratorConfig::TruncLcg => GeneratorKind::TruncLcg,
            GeneratorConfig::TimeSeeded { .. } => GeneratorKind::TimeSeeded,
            GeneratorConfig::Book4Suggested { .. } => GeneratorKind::Book4Suggested,
            GeneratorConfig::Strong => GeneratorKind::Strong,
        }
    }

    /// Field-level problems, as (field, message).
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if let GeneratorConfig::CounterPrefix { prefix, tick_ms, jitter } = self {
            if *prefix > 0x1_FFFF {
                return Err(("generator.prefix", format!("{prefix:#x} does not fit in 17 bits")));
            }
            if !(tick_ms.is_finite() && *tick_ms >= 0.001) {
                return Err(("generator.tick_ms", format!("{tick_ms} must be at least 0.001")));
            }
            if !(0.0..0.5).contains(jitter) {
                return Err(("generator.jitter", format!("{jitter} must be in [0, 0.5)")));
            }
        }
        Ok(())
    }

    pub fn tick_us(&self) -> Option<u64> {
        match self {
            GeneratorConfig::CounterPrefix { tick_ms, .. } => Some((tick_ms * 1000.0).round() as u64),
            _ => None,
        }
    }

    /// Instantiates the generator; every random choice comes from `seed`.
    pub fn build(&self, seed: u64, clock: &SimClock) -> UnGenerator {
        let mix = splitmix64(seed);
        match self {
            GeneratorConfig::CounterPrefix { prefix, jitter, .. } => {
                let tick_us = self.tick_us().expect("counter has a tick");
                let period = tick_us * COUNTER_MODULUS;
                UnGenerator::CounterPrefix(CounterPrefix::new(
                    *prefix,
                    tick_us,
                    mix % period,
                    *jitter,
                    splitmix64(mix),
                ))
            }
            GeneratorConfig::CharC => UnGenerator::char_c(mix),
            GeneratorConfig::TruncLcg => UnGenerator::trunc_lcg(mix as u32),
            GeneratorConfig::TimeSeeded { rtc_epoch_s, rtc_battery } => {
                UnGenerator::TimeSeeded(TimeSeeded::new(*rtc_epoch_s, *rtc_battery, clock))
            }
            GeneratorConfig::Book4Suggested { retained } => {
                UnGenerator::Book4(Book4Suggested::new(*retained, (mix % 10_000) as u32))
            }
            GeneratorConfig::Strong => UnGenerator::strong(mix),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palma_rows_from_prefix_and_count() {
        assert_eq!(counter_prefix_un(0x1E248, 3300, 0x6E04 * 3300), Un(0xF1246E04));
        assert_eq!(counter_prefix_un(0, 3300, 0), Un(0));
        // floor(now / 3.3ms) mod 2^15 == 0x1354
        let now_us = (0x1354 + 3 * COUNTER_MODULUS) * 3300 + 1700;
        assert_eq!(counter_prefix_un(0x1E248, 3300, now_us), Un(0xF1241354));
    }

    #[test]
    fn counter_differences_follow_elapsed_ticks() {
        let c = CounterPrefix::new(0x1E248, 3300, 12_345, 0.0, 0);
        for (t, dt) in [(0u64, 35_000_000u64), (1_000, 3_300), (99_999_999, 250_000_000)] {
            let a = c.un_at(t).0 & 0x7FFF;
            let b = c.un_at(t + dt).0 & 0x7FFF;
            let expect = ((t + dt + 12_345) / 3300 - (t + 12_345) / 3300) % COUNTER_MODULUS;
            assert_eq!(u64::from(b.wrapping_sub(a) & 0x7FFF), expect);
        }
    }

    #[test]
    fn jitter_moves_boundaries_but_not_rate() {
        let c = CounterPrefix::new(1, 3300, 0, 0.2, 99);
        let mut prev = 0;
        let mut moved = 0;
        for t in (0..2_000_000u64).step_by(97) {
            let n = c.ticks_at(t);
            assert!(n >= prev, "counter went backwards at {t}");
            assert!(n.abs_diff(t / 3300) <= 1);
            moved += usize::from(n != t / 3300);
            prev = n;
        }
        assert!(moved > 0);
    }

    #[test]
    fn char_c_examples() {
        assert!(char_c_predicate(Un(0x77028437)));
        assert!(!char_c_predicate(Un(0x013A8CE2)));
        let mut g = UnGenerator::char_c(1);
        let clock = SimClock::default();
        assert!((0..10_000).all(|_| char_c_predicate(g.next_un(&clock))));
    }

    #[test]
    fn book4_depends_on_retained_arqcs_and_forgets_on_reboot() {
        let clock = SimClock::at_ms(5_000);
        let mut a = UnGenerator::Book4(Book4Suggested::new(4, 7));
        let mut b = a.clone();
        b.observe_arqc(&[1; 8]);
        assert_ne!(a.clone().next_un(&clock), b.clone().next_un(&clock));
        b.reboot(&clock);
        assert_eq!(a.next_un(&clock), b.next_un(&clock));
        assert_eq!(book4_un(&[], 7, 5), book4_un(&[], 7, 5));
        assert_ne!(book4_un(&[[1; 8]], 7, 5), book4_un(&[[2; 8]], 7, 5));
    }

    #[test]
    fn time_seeded_repeats_without_rtc_battery() {
        let mut g = TimeSeeded::new(1000, false, &SimClock::default());
        let first: Vec<Un> = (0..3).map(|_| g.next_un(&SimClock::default())).collect();
        g.reboot(&SimClock::at_ms(86_400_000));
        let again: Vec<Un> = (0..3).map(|_| g.next_un(&SimClock::default())).collect();
        assert_eq!(first, again);

        let mut h = TimeSeeded::new(1000, true, &SimClock::default());
        h.reboot(&SimClock::at_ms(3_000));
        assert_eq!(h.next_un(&SimClock::default()), TimeSeeded::stream(1003, 1)[0]);
    }

    #[test]
    fn strong_is_reproducible() {
        let clock = SimClock::default();
        let mut a = UnGenerator::strong(42);
        let mut b = UnGenerator::strong(42);
        assert!((0..100).all(|_| a.next_un(&clock) == b.next_un(&clock)));
    }

    #[test]
    fn scripted_wraps() {
        let clock = SimClock::default();
        let mut s = UnGenerator::Scripted(Scripted::new(vec![Un(1), Un(2)]));
        let got: Vec<u32> = (0..3).map(|_| s.next_un(&clock).0).collect();
        assert_eq!(got, vec![1, 2, 1]);
    }
}
