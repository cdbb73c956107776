use preplay_core::analyzer::{classify, detect_stuck_bits, fit_counter, Classification, UnObservation};
use preplay_core::countermeasures::conformance_2cm085;
use preplay_core::emv::Un;
use preplay_core::unzoo::{
    char_c_predicate, lcg, predict, recover_counter, Book4Suggested, CounterPrefix, GeneratorConfig, Prediction,
    PredictorProfile, SimClock, TimedUn, UnGenerator, UnSource, CHAR_C_MASK,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn draw(g: &mut UnGenerator, clock: &mut SimClock, n: usize, step_us: u64) -> Vec<TimedUn> {
    (0..n)
        .map(|_| {
            let o = TimedUn {
                at_us: clock.now_us(),
                un: g.next_un(clock),
            };
            clock.advance_us(step_us);
            o
        })
        .collect()
}

fn sequence(p: Prediction) -> Vec<Un> {
    match p {
        Prediction::Sequence(v) => v,
        other => panic!("expected a sequence, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn counter_predictions_match_the_generator(
        prefix in 0u32..1 << 17,
        tick_us in 1000u64..10_000,
        phase in any::<u64>(),
        gaps in proptest::collection::vec(1u64..5_000_000, 2..8),
        probes in proptest::collection::vec(0u64..600_000_000, 20),
    ) {
        let c = CounterPrefix::new(prefix, tick_us, phase % (tick_us << 15), 0.0, 0);
        let mut t = 36_000_000_000u64;
        let mut cal = vec![];
        for g in &gaps {
            cal.push(TimedUn { at_us: t, un: c.un_at(t) });
            t += g;
        }
        let m = recover_counter(tick_us, 0, &cal).unwrap();
        prop_assert_eq!(m.prefix17, prefix);
        for o in &cal {
            prop_assert_eq!(m.un_at_exact(o.at_us), Some(o.un));
        }
        for p in probes {
            if let Some(u) = m.un_at_exact(t + p) {
                prop_assert_eq!(u, c.un_at(t + p));
            }
        }
        // Aiming at the middle of a predicted window hits it once the phase is pinned.
        if m.width_us() <= (tick_us / 4) as i64 {
            let (s, len) = m.next_window(0x2A, t);
            prop_assert_eq!(c.un_at(s + len / 2).0 & 0x7FFF, 0x2A);
        }
    }

    #[test]
    fn lcg_predictions_match_the_generator(seed in any::<u32>(), n_cal in 2usize..6) {
        let mut g = UnGenerator::trunc_lcg(seed);
        let mut clock = SimClock::default();
        let cal = draw(&mut g, &mut clock, n_cal, 1);
        let next = sequence(predict(&PredictorProfile::TruncLcg, &cal, 8, 0).unwrap());
        prop_assert_eq!(next, draw(&mut g, &mut clock, 8, 1).into_iter().map(|o| o.un).collect::<Vec<_>>());
        prop_assert_eq!(&lcg::sequence(seed, n_cal)[..], &cal.iter().map(|o| o.un).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn time_seeded_predictions_match_the_generator(
        epoch in 1_000_000_000u64..2_000_000_000,
        boot_s in 0u64..86_400,
        battery in any::<bool>(),
        n_cal in 1usize..4,
    ) {
        let mut clock = SimClock::at_ms(boot_s * 1000 + 321);
        let cfg = GeneratorConfig::TimeSeeded { rtc_epoch_s: epoch, rtc_battery: battery };
        let mut g = cfg.build(0, &clock);
        let range = if battery { epoch + boot_s - 2..=epoch + boot_s + 2 } else { epoch..=epoch };
        let cal = draw(&mut g, &mut clock, n_cal, 1000);
        let next = sequence(predict(&PredictorProfile::TimeSeeded { boot_seconds: range }, &cal, 5, 0).unwrap());
        prop_assert_eq!(next, draw(&mut g, &mut clock, 5, 1000).into_iter().map(|o| o.un).collect::<Vec<_>>());
    }

    #[test]
    fn book4_after_reboot_matches_the_generator(
        txn in any::<u32>(),
        macs in proptest::collection::vec(any::<[u8; 8]>(), 0..6),
        at_s in 0u64..1_000_000,
    ) {
        let mut g = UnGenerator::Book4(Book4Suggested::new(4, txn));
        for m in &macs {
            g.observe_arqc(m);
        }
        let clock = SimClock::at_ms(at_s * 1000 + 999);
        g.reboot(&clock);
        let txn_now = match &g {
            UnGenerator::Book4(b) => b.txn_counter,
            _ => unreachable!(),
        };
        let p = predict(&PredictorProfile::Book4PostReboot { txn_counter: txn_now }, &[], 1, clock.now_s()).unwrap();
        prop_assert_eq!(p, Prediction::Value(g.next_un(&clock)));
    }

    #[test]
    fn stuck_bit_masks_survive_a_rescan(
        zero in any::<u32>(),
        one in any::<u32>(),
        raw in proptest::collection::vec(any::<u32>(), 1..40),
    ) {
        let one = one & !zero;
        let seq: Vec<UnObservation> = raw
            .iter()
            .enumerate()
            .map(|(i, &r)| UnObservation::new(i as u64 * 1000, Un((r & !zero) | one)))
            .collect();
        let s = detect_stuck_bits(&seq).unwrap();
        prop_assert_eq!(s.zero_mask & s.one_mask, 0);
        prop_assert_eq!(s.zero_mask & zero, zero);
        prop_assert_eq!(s.one_mask & one, one);
        // Re-scan bit by bit: flagged bits never move, unflagged bits do.
        for bit in 0..32 {
            let m = 1u32 << bit;
            let ones = seq.iter().filter(|o| o.un.0 & m != 0).count();
            let expect_zero = ones == 0;
            let expect_one = ones == seq.len();
            prop_assert_eq!(s.zero_mask & m != 0, expect_zero, "bit {}", bit);
            prop_assert_eq!(s.one_mask & m != 0, expect_one, "bit {}", bit);
        }
        prop_assert_eq!(s.low_confidence, seq.len() < 10);
    }

    #[test]
    fn fit_counter_recovers_an_identifiable_counter(
        prefix in 0u32..1 << 17,
        phase in any::<u64>(),
        gaps_ms in proptest::collection::vec(20_000u64..100_000, 4..20),
    ) {
        let tick_us = 3300;
        let c = CounterPrefix::new(prefix, tick_us, phase % (tick_us << 15), 0.0, 0);
        let mut t_ms = 36_000_000u64;
        let mut seq = vec![];
        for g in &gaps_ms {
            seq.push(UnObservation::new(t_ms, c.un_at(t_ms * 1000)));
            t_ms += g;
        }
        // A 17-bit prefix is only identifiable if the top counter bit moves.
        let varying = seq.iter().fold(0u32, |acc, o| acc | (o.un.0 ^ seq[0].un.0));
        prop_assume!(varying & 0x4000 != 0);
        let fit = fit_counter(&seq).unwrap();
        prop_assert_eq!(fit.prefix_bits, 17);
        prop_assert_eq!(fit.prefix_value, prefix);
        prop_assert_eq!(fit.modulus, 1 << 15);
        prop_assert!((fit.ticks_per_second - 1e6 / tick_us as f64).abs() < 1.0);
        prop_assert_eq!(classify(&seq).unwrap().classification, Classification::Counter);
    }
}

/// Pearson statistic of `counts` against a uniform expectation.
fn chi_square(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn strong_nibbles_are_uniform() {
    // 15 degrees of freedom at the 0.001 level.
    const CRITICAL: f64 = 37.697;
    let mut g = UnGenerator::strong(2012);
    let clock = SimClock::default();
    let mut per_pos = [[0u64; 16]; 8];
    let mut char_c = 0;
    let n = 100_000;
    for _ in 0..n {
        let u = g.next_un(&clock).0;
        for (p, row) in per_pos.iter_mut().enumerate() {
            row[((u >> (4 * p)) & 0xF) as usize] += 1;
        }
        char_c += u32::from(char_c_predicate(Un(u)));
    }
    let mut all = [0u64; 16];
    for (p, row) in per_pos.iter().enumerate() {
        let x = chi_square(row);
        assert!(x < CRITICAL, "nibble {p}: chi2 = {x}");
        for (a, c) in all.iter_mut().zip(row) {
            *a += c;
        }
    }
    assert!(chi_square(&all) < CRITICAL);
    // Five bits clear by chance: 1/32, give or take five standard deviations.
    let frac = f64::from(char_c) / f64::from(n);
    let sd = (1.0 / 32.0 * 31.0 / 32.0 / f64::from(n)).sqrt();
    assert!((frac - 1.0 / 32.0).abs() < 5.0 * sd, "char C fraction {frac}");
}

#[test]
fn strong_sequences_are_rarely_flagged() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut flagged = 0;
    for i in 0..1000 {
        let mut g = UnGenerator::strong(i);
        let clock = SimClock::default();
        let mut t = rng.random_range(0..86_400_000u64);
        let seq: Vec<UnObservation> = (0..20)
            .map(|_| {
                t += rng.random_range(1000..120_000);
                UnObservation::new(t, g.next_un(&clock))
            })
            .collect();
        let r = classify(&seq).unwrap();
        if r.classification != Classification::StrongUnknown {
            flagged += 1;
        }
    }
    assert!(flagged <= 10, "{flagged} of 1000 strong sequences flagged");
}

#[test]
fn char_c_sources_are_caught_with_twenty_samples() {
    let mut g = UnGenerator::char_c(5);
    let clock = SimClock::default();
    let seq: Vec<UnObservation> = (0..20).map(|i| UnObservation::new(i * 60_000, g.next_un(&clock))).collect();
    assert!(seq.iter().all(|o| o.un.0 & CHAR_C_MASK == 0));
    let r = classify(&seq).unwrap();
    assert!(r.char_c.present);
    assert!(r.char_c.p_value <= 2f64.powi(-100));
    assert_eq!(r.classification, Classification::WeakRng);
}

#[test]
fn counter_passes_conformance_yet_is_classified_counter() {
    let cfg = GeneratorConfig::CounterPrefix {
        prefix: 0x1E248,
        tick_ms: 3.3,
        jitter: 0.0,
    };
    let start = SimClock::at_ms(36_000_000);
    let mut g = cfg.build(1, &start);
    let mut clock = start;
    let conf = conformance_2cm085(&mut g.clone(), &mut clock, 1000, 30_000_000);
    assert!(conf.pass, "{conf:?}");
    let mut clock = start;
    let seq: Vec<UnObservation> = draw(&mut g, &mut clock, 4000, 30_000_000)
        .into_iter()
        .map(|o| UnObservation::new(o.at_us / 1000, o.un))
        .collect();
    assert_eq!(classify(&seq).unwrap().classification, Classification::Counter);
    // A source that repeats within four draws fails.
    let mut lazy = UnGenerator::Scripted(preplay_core::unzoo::Scripted::new(vec![Un(1), Un(2), Un(3)]));
    assert!(!conformance_2cm085(&mut lazy, &mut SimClock::default(), 10, 1).pass);
}
