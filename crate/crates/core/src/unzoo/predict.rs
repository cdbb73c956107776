//! Closed-form predictors matching each weak generator family.

use thiserror::Error;

use super::generators::{book4_un, GeneratorKind, TimeSeeded, COUNTER_BITS, COUNTER_MODULUS};
use super::lcg;
use crate::emv::Un;

/// One timestamped UN as seen by an observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedUn {
    pub at_us: u64,
    pub un: Un,
}

/// What the attacker knows about the source beyond the calibration samples.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorProfile {
    /// Tick period known; each sample time is uncertain by up to `slack_us`.
    CounterPrefix { tick_us: u64, slack_us: u64 },
    /// Calibration values are the first draws since the seed was set.
    TruncLcg,
    /// Calibration values are the first draws after a boot whose RTC second
    /// lies in `boot_seconds`.
    TimeSeeded { boot_seconds: std::ops::RangeInclusive<u64> },
    /// Post-reboot source: no retained ARQCs, next transaction counter known.
    Book4PostReboot { txn_counter: u32 },
    CharC,
    Strong,
}

impl PredictorProfile {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            PredictorProfile::CounterPrefix { .. } => GeneratorKind::CounterPrefix,
            PredictorProfile::TruncLcg => GeneratorKind::TruncLcg,
            PredictorProfile::TimeSeeded { .. } => GeneratorKind::TimeSeeded,
            PredictorProfile::Book4PostReboot { .. } => GeneratorKind::Book4Suggested,
            PredictorProfile::CharC => GeneratorKind::CharC,
            PredictorProfile::Strong => GeneratorKind::Strong,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictError {
    #[error("{0} sources are unpredictable")]
    Unpredictable(GeneratorKind),
    #[error("calibration under-determines the state: {0}")]
    Ambiguous(String),
    #[error("calibration is inconsistent with the source model: {0}")]
    Inconsistent(String),
    #[error("calibration is empty")]
    EmptyCalibration,
}

/// Recovered free-running counter: value(t) = floor((t + φ) / tick) mod 2^15
/// behind a fixed prefix, with φ known to lie in `[phase_lo, phase_hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterModel {
    pub prefix17: u32,
    pub tick_us: u64,
    pub phase_lo: i64,
    pub phase_hi: i64,
}

impl CounterModel {
    fn period(&self) -> i64 {
        self.tick_us as i64 * COUNTER_MODULUS as i64
    }

    pub fn phase_mid(&self) -> i64 {
        self.phase_lo + (self.phase_hi - self.phase_lo) / 2
    }

    fn count_with(&self, phase: i64, t_us: u64) -> u32 {
        let x = (t_us as i64 + phase).rem_euclid(self.period());
        (x / self.tick_us as i64) as u32
    }

    fn un_from_count(&self, count: u32) -> Un {
        Un((self.prefix17 << COUNTER_BITS) | count)
    }

    /// Best estimate of the UN at `t_us` (centre of the phase window).
    pub fn un_at(&self, t_us: u64) -> Un {
        self.un_from_count(self.count_with(self.phase_mid(), t_us))
    }

    /// UN at `t_us` if every phase still consistent with calibration agrees.
    pub fn un_at_exact(&self, t_us: u64) -> Option<Un> {
        let a = self.count_with(self.phase_lo, t_us);
        let b = self.count_with(self.phase_hi - 1, t_us);
        (a == b).then(|| self.un_from_count(a))
    }

    /// Start of the first window at or after `after_us` (estimated phase) in
    /// which the counter shows `count`, plus the window length.
    pub fn next_window(&self, count: u32, after_us: u64) -> (u64, u64) {
        let tick = self.tick_us as i64;
        let period = self.period();
        let base = i64::from(count % COUNTER_MODULUS as u32) * tick - self.phase_mid();
        let after = after_us as i64;
        let mut start = base + (after - base).div_euclid(period) * period;
        if start + tick <= after {
            start += period;
        }
        (start.max(0) as u64, self.tick_us)
    }

    pub fn width_us(&self) -> i64 {
        self.phase_hi - self.phase_lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Counter(CounterModel),
    /// Values that follow the calibration window, in draw order.
    Sequence(Vec<Un>),
    Value(Un),
}

pub fn recover_counter(tick_us: u64, slack_us: u64, calibration: &[TimedUn]) -> Result<CounterModel, PredictError> {
    let first = calibration.first().ok_or(PredictError::EmptyCalibration)?;
    if tick_us == 0 {
        return Err(PredictError::Inconsistent("tick must be positive".into()));
    }
    let prefix17 = first.un.0 >> COUNTER_BITS;
    if let Some(bad) = calibration.iter().find(|o| o.un.0 >> COUNTER_BITS != prefix17) {
        return Err(PredictError::Inconsistent(format!("{} breaks the common prefix", bad.un)));
    }
    let tick = tick_us as i64;
    let period = tick * COUNTER_MODULUS as i64;
    let slack = slack_us.min(tick_us / 2) as i64;
    // Each sample pins φ to [c·tick − t, (c+1)·tick − t) modulo the period.
    let arc = |o: &TimedUn| {
        let c = i64::from(o.un.0 & (COUNTER_MODULUS as u32 - 1));
        let s = (c * tick - o.at_us as i64).rem_euclid(period);
        (s - slack, s + tick + slack)
    };
    let (mut lo, mut hi) = arc(first);
    for o in &calibration[1..] {
        let (s, e) = arc(o);
        let shift = ((lo - s) as f64 / period as f64).round() as i64 * period;
        lo = lo.max(s + shift);
        hi = hi.min(e + shift);
        if lo >= hi {
            return Err(PredictError::Inconsistent(format!(
                "no counter phase explains the sample at {} us",
                o.at_us
            )));
        }
    }
    Ok(CounterModel {
        prefix17,
        tick_us,
        phase_lo: lo,
        phase_hi: hi,
    })
}

/// Predicts from calibration. `horizon` is how many future values to emit
/// for sequence-type sources; `target_s` is the clock second for BOOK4.
pub fn predict(
    profile: &PredictorProfile,
    calibration: &[TimedUn],
    horizon: usize,
    target_s: u64,
) -> Result<Prediction, PredictError> {
    match profile {
        PredictorProfile::Strong | PredictorProfile::CharC => Err(PredictError::Unpredictable(profile.kind())),
        PredictorProfile::Book4PostReboot { txn_counter } => Ok(Prediction::Value(book4_un(&[], *txn_counter, target_s))),
        _ if calibration.is_empty() => Err(PredictError::EmptyCalibration),
        PredictorProfile::CounterPrefix { tick_us, slack_us } => {
            recover_counter(*tick_us, *slack_us, calibration).map(Prediction::Counter)
        }
        PredictorProfile::TruncLcg => {
            let uns: Vec<Un> = calibration.iter().map(|o| o.un).collect();
            if uns.len() < 2 {
                return Err(PredictError::Ambiguous("need at least two UNs".into()));
            }
            let seeds = lcg::recover_seeds(&uns);
            match seeds.as_slice() {
                [] => Err(PredictError::Inconsistent("no seed reproduces the calibration".into())),
                [seed] => {
                    let all = lcg::sequence(*seed, uns.len() + horizon);
                    Ok(Prediction::Sequence(all[uns.len()..].to_vec()))
                }
                many => Err(PredictError::Ambiguous(format!("{} seed classes fit", many.len()))),
            }
        }
        PredictorProfile::TimeSeeded { boot_seconds } => {
            let uns: Vec<Un> = calibration.iter().map(|o| o.un).collect();
            let mut hits = boot_seconds
                .clone()
                .filter(|&s| TimeSeeded::stream(s, uns.len()) == uns)
                .map(|s| TimeSeeded::stream(s, uns.len() + horizon)[uns.len()..].to_vec());
            match (hits.next(), hits.next()) {
                (Some(future), None) => Ok(Prediction::Sequence(future)),
                (None, _) => Err(PredictError::Inconsistent("no boot second in range fits".into())),
                (Some(_), Some(_)) => Err(PredictError::Ambiguous("several boot seconds fit".into())),
            }
        }
    }
}
