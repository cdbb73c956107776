//! Acceptance checks, one PASS/FAIL line per criterion. Run with
//! `cargo test -p preplay-cli --test acceptance`.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::rc::Rc;

use preplay_core::actors::{
    reference, run_transaction, AuthRequest, CardCommand, CardEndpoint, CardResponse, Channel, DeclineReason,
    Interceptor, Outcome, Purchase,
};
use preplay_core::analyzer::{classify, detect_stuck_bits, Classification, UnObservation};
use preplay_core::attack::{
    indistinguishability_experiment, run_campaign, skim, template_context, ExperimentSetup, SkimBudget, Verdict,
};
use preplay_core::countermeasures::conformance_2cm085;
use preplay_core::emv::{
    compute_cryptogram, verify_cryptogram, Arc, Atc, CryptogramKind, Iad, TransactionContext, Tvr, Udk, Un,
};
use preplay_core::scenario::ScenarioConfig;
use preplay_core::unzoo::{
    predict, recover_counter, Book4Suggested, CounterPrefix, GeneratorConfig, Prediction, PredictorProfile, Scripted,
    SimClock, TimeSeeded, TimedUn, UnGenerator, UnSource,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = fn() -> Check;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn scenario(name: &str) -> Result<ScenarioConfig, String> {
    let path = root().join("scenarios").join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let sc: ScenarioConfig = toml::from_str(&text).map_err(|e| format!("{name}: {e}"))?;
    sc.validate().map_err(|e| format!("{name}: {e}"))?;
    Ok(sc)
}

fn analyze(file: &str) -> Result<Value, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_preplay"))
        .args(["analyze", file, "--format", "json"])
        .current_dir(root())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), format!("analyze {file}: {}", String::from_utf8_lossy(&o.stderr)))?;
    let v: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    v.get(0).cloned().ok_or_else(|| format!("analyze {file}: no sources"))
}

fn mask(v: &Value) -> Result<u32, String> {
    let s = v.as_str().ok_or("mask is not a string")?;
    u32::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|e| e.to_string())
}

fn palma_log() -> Check {
    let r = analyze("data/gambin.csv")?;
    let fit = &r["counter_fit"];
    ensure(r["classification"] == "COUNTER", format!("classified {}", r["classification"]))?;
    ensure(fit["prefix_bits"] == 17, format!("prefix bits {}", fit["prefix_bits"]))?;
    ensure(fit["prefix_value"] == "0x1E248", format!("prefix {}", fit["prefix_value"]))?;
    ensure(fit["modulus"] == 32768, format!("modulus {}", fit["modulus"]))?;
    let rate = fit["ticks_per_second"].as_f64().ok_or("no rate")?;
    ensure((200.0..=400.0).contains(&rate), format!("{rate} ticks/s"))?;
    Ok(format!("COUNTER, 17-bit prefix 0x1E248, modulus 2^15, {rate:.1} ticks/s"))
}

fn characteristic_c() -> Check {
    let r = analyze("data/charc.csv")?;
    let zero = mask(&r["stuck_bits"]["zero_mask"])?;
    ensure(zero == 0x80F0_0000, format!("zero mask {zero:#010X}"))?;
    ensure(r["char_c"]["present"] == true, "char_c not detected")?;
    let p = r["char_c"]["p_value"].as_f64().ok_or("no p")?;
    ensure(p <= 2f64.powi(-100), format!("p = {p:e}"))?;
    let pos = analyze("data/pos1.csv")?;
    ensure(pos["char_c"]["present"] == false, "POS1 flagged as char_c")?;
    let pos_zero = mask(&pos["stuck_bits"]["zero_mask"])?;
    ensure(pos_zero & 0x8000_0000 != 0, format!("POS1 zero mask {pos_zero:#010X}"))?;
    Ok(format!("ATM zero mask {zero:#010X}, p = {p:.1e}; POS1 bit 31 stuck, no char C"))
}

fn indistinguishable() -> Check {
    let r = indistinguishability_experiment(&ExperimentSetup::default()).map_err(|e| e.to_string())?;
    ensure(r.verdict == Verdict::Identical, format!("{:?}", r.verdict))?;
    let out = run_campaign(&scenario("palma_counter.toml")?, 0);
    let e = out.report.experiment.ok_or("scenario ran no experiment")?;
    ensure(e.verdict == Verdict::Identical, format!("scenario: {:?}", e.verdict))?;
    Ok(format!("IDENTICAL over {} transcript entries", r.compared_entries))
}

fn efficacy() -> Check {
    let counter = run_campaign(&scenario("palma_counter.toml")?, 0).report;
    ensure(counter.attempts == 100, "counter scenario is not 100 attempts")?;
    ensure(counter.dispense_rate >= 0.90, format!("counter {}", counter.dispense_rate))?;
    let sc = scenario("strong_direct.toml")?;
    ensure(sc.attack.campaign_attempts == 100_000, "strong scenario is not 10^5 attempts")?;
    let strong = run_campaign(&sc, 0).report;
    ensure(strong.dispenses == 0, format!("strong dispensed {}", strong.dispenses))?;
    let mitm = run_campaign(&scenario("mitm_cutout.toml")?, 0).report;
    ensure(mitm.dispense_rate == 1.0, format!("mitm {}", mitm.dispense_rate))?;
    let nonce = run_campaign(&scenario("mitm_issuer_nonce.toml")?, 0).report;
    ensure(nonce.dispenses == 0, format!("mitm+nonce dispensed {}", nonce.dispenses))?;
    Ok(format!(
        "counter {:.2}, strong 0/{}, mitm {:.2}, mitm+nonce {:.2}",
        counter.dispense_rate, strong.attempts, mitm.dispense_rate, nonce.dispense_rate
    ))
}

fn countermeasures() -> Check {
    let mono = run_campaign(&scenario("palma_monotonic.toml")?, 0).report;
    ensure(mono.declines_by_reason.get("ATC_STALE") == Some(&mono.attempts), format!("{:?}", mono.declines_by_reason))?;

    let committed = scenario("palma_commitment.toml")?;
    let mut open = committed.clone();
    open.policies = Default::default();
    let with = run_campaign(&committed, 0).report.dispense_rate;
    let without = run_campaign(&open, 0).report.dispense_rate;
    let factor = if with == 0.0 { f64::INFINITY } else { without / with };
    ensure(factor >= 5.0, format!("commitment factor {factor:.2} ({without} -> {with})"))?;

    let audit_sc = scenario("palma_audit.toml")?;
    ensure(!audit_sc.policies.atc_monotonic, "audit scenario blocks approvals")?;
    let audit = run_campaign(&audit_sc, 0).report.audit.ok_or("no audit")?;
    ensure(audit.preplay_approvals > 0, "nothing pre-played was approved")?;
    ensure(
        audit.preplay_flagged == audit.preplay_approvals,
        format!("{}/{} flagged", audit.preplay_flagged, audit.preplay_approvals),
    )?;
    Ok(format!(
        "monotonic ATC declines {}/{}, commitment factor {factor:.1}, audit flags {}/{} ({} genuine false positives)",
        mono.attempts, mono.attempts, audit.preplay_flagged, audit.preplay_approvals, audit.genuine_flagged
    ))
}

fn conformance_gap() -> Check {
    let cfg = GeneratorConfig::CounterPrefix {
        prefix: 0x1E248,
        tick_ms: 3.3,
        jitter: 0.0,
    };
    let start = SimClock::at_ms(36_000_000);
    let g = cfg.build(20110629, &start);
    let mut clock = start;
    let conf = conformance_2cm085(&mut g.clone(), &mut clock, 1000, 30_000_000);
    ensure(conf.pass, format!("conformance failed at group {:?}", conf.first_failure))?;
    let mut g = g;
    let mut clock = start;
    let seq: Vec<UnObservation> = (0..4000)
        .map(|_| {
            let o = UnObservation::new(clock.now_ms(), g.next_un(&clock));
            clock.advance_us(30_000_000);
            o
        })
        .collect();
    let c = classify(&seq).map_err(|e| e.to_string())?.classification;
    ensure(c == Classification::Counter, format!("classified {c}"))?;
    Ok("2CM.085 PASS over 1000 groups, same stream classified COUNTER".into())
}

fn skim_throughput() -> Check {
    let targets: Vec<Un> = (0..1000).map(|i| Un(0xF124_0000 + i)).collect();
    let template = template_context(&reference::terminal_config(), reference::AMOUNT);
    let mut card = reference::card(0);
    let table = skim(&mut card, &targets, template, reference::PIN, SkimBudget::default(), &mut SimClock::default())
        .map_err(|e| e.to_string())?;
    ensure(table.len() > 100, format!("{} entries", table.len()))?;
    Ok(format!("{} entries in 30 s", table.len()))
}

// Property suites, deterministic and self-contained.

fn random_ctx(rng: &mut ChaCha20Rng) -> TransactionContext {
    let flags = [Tvr::SDA_NOT_VERIFIED, Tvr::SDA_FAILED, Tvr::DDA_FAILED, Tvr::CVM_NOT_SUCCESSFUL, Tvr::ONLINE_PIN_ENTERED];
    let tvr = flags.iter().fold(Tvr::empty(), |t, f| t.with(*f, rng.random()));
    let date = rng.random_range(2000..2100) * 10_000 + rng.random_range(1..13) * 100 + rng.random_range(1..29);
    TransactionContext::new(rng.random(), rng.random_range(0..1000), date, rng.random_range(0..1000), tvr, Un(rng.next_u32()))
        .expect("valid date")
}

fn flip_bit(v: u64, rng: &mut ChaCha20Rng, bits: u32) -> u64 {
    v ^ (1 << rng.random_range(0..bits))
}

fn mac_suites(rng: &mut ChaCha20Rng) -> Result<usize, String> {
    let kinds = [
        (CryptogramKind::Arqc, None),
        (CryptogramKind::Aac, None),
        (CryptogramKind::Tc, Some(Arc::Approve)),
        (CryptogramKind::Tc, Some(Arc::Decline)),
    ];
    let n = 10_000;
    for i in 0..n {
        let udk = Udk::new(rng.random());
        let ctx = random_ctx(rng);
        let atc = Atc(rng.random());
        let iad: Vec<u8> = (0..rng.random_range(1..=32)).map(|_| rng.random()).collect();
        let iad = Iad::new(iad).expect("length in range");
        let (kind, arc) = kinds[i % 4];
        let c = compute_cryptogram(kind, &udk, &ctx, atc, &iad, arc).map_err(|e| e.to_string())?;
        ensure(verify_cryptogram(kind, &udk, &ctx, &c, arc), format!("case {i}: round trip"))?;
        // One single-bit flip in every serialized field, and in the MAC.
        let mut variants = vec![
            TransactionContext { amount: flip_bit(ctx.amount, rng, 64), ..ctx },
            TransactionContext { currency: flip_bit(ctx.currency.into(), rng, 16) as u16, ..ctx },
            TransactionContext { date: flip_bit(ctx.date.into(), rng, 32) as u32, ..ctx },
            TransactionContext { terminal_country: flip_bit(ctx.terminal_country.into(), rng, 16) as u16, ..ctx },
            TransactionContext { un: Un(flip_bit(ctx.un.0.into(), rng, 32) as u32), ..ctx },
        ];
        let f = [Tvr::SDA_NOT_VERIFIED, Tvr::CVM_NOT_SUCCESSFUL, Tvr::ONLINE_PIN_ENTERED][i % 3];
        variants.push(TransactionContext { tvr: ctx.tvr.with(f, !ctx.tvr.has(f)), ..ctx });
        for (j, v) in variants.iter().enumerate() {
            ensure(!verify_cryptogram(kind, &udk, v, &c, arc), format!("case {i}: field {j} not bound"))?;
        }
        let mut bad = c.clone();
        bad.atc = Atc(flip_bit(atc.0.into(), rng, 16) as u16);
        ensure(!verify_cryptogram(kind, &udk, &ctx, &bad, arc), format!("case {i}: ATC not bound"))?;
        let mut bad = c.clone();
        let mut bytes = iad.as_bytes().to_vec();
        let k = rng.random_range(0..bytes.len());
        bytes[k] ^= 1 << rng.random_range(0..8);
        bad.iad = Iad::new(bytes).expect("same length");
        ensure(!verify_cryptogram(kind, &udk, &ctx, &bad, arc), format!("case {i}: IAD not bound"))?;
        let mut bad = c.clone();
        bad.mac[rng.random_range(0..8)] ^= 1 << rng.random_range(0..8);
        ensure(!verify_cryptogram(kind, &udk, &ctx, &bad, arc), format!("case {i}: MAC flip accepted"))?;
    }
    Ok(n)
}

fn atc_monotonic(rng: &mut ChaCha20Rng) -> Result<(), String> {
    for case in 0..1000 {
        let mut card = reference::card(rng.random_range(0..1000));
        let clock = SimClock::default();
        let mut last = card.atc();
        for _ in 0..40 {
            let ctx = reference::ctx(Un(rng.next_u32()));
            let arc = if rng.random() { Arc::Approve } else { Arc::Decline };
            let cmd = match rng.random_range(0..5) {
                0 => CardCommand::ReadRecords,
                1 => CardCommand::GetDataAtc,
                2 | 3 => CardCommand::GenerateAcArqc(ctx),
                _ => CardCommand::GenerateAcTc { ctx, arc },
            };
            let first_ac = matches!(cmd, CardCommand::GenerateAcArqc(_));
            if let Some(CardResponse::Cryptogram(c)) = card.handle(&cmd, &clock).map(|r| r.response) {
                if first_ac {
                    ensure(c.atc > last, format!("case {case}: ATC {:?} after {:?}", c.atc, last))?;
                    last = c.atc;
                } else {
                    ensure(c.atc == last, format!("case {case}: TC at a new ATC"))?;
                }
            }
            ensure(card.atc() == last, format!("case {case}: counter moved without a GENERATE AC"))?;
        }
    }
    Ok(())
}

#[derive(Default, Clone)]
struct Recorder(Rc<RefCell<Vec<AuthRequest>>>);

impl Interceptor for Recorder {
    fn on_auth_request(&mut self, req: &mut AuthRequest) {
        self.0.borrow_mut().push(req.clone());
    }
}

fn replay_rejection(rng: &mut ChaCha20Rng) -> Result<(), String> {
    for case in 0..200 {
        let uns: Vec<Un> = (0..rng.random_range(1..5)).map(|_| Un(rng.next_u32())).collect();
        let mut issuer = reference::issuer(Default::default(), rng.random());
        let mut card = reference::card(rng.random_range(0..1000));
        let mut terminal = reference::terminal(UnGenerator::Scripted(Scripted::new(uns.clone())), case);
        let rec = Recorder::default();
        let mut channel = Channel::with_interceptor(Box::new(rec.clone()));
        let mut clock = SimClock::at_ms(36_000_000);
        let purchase = Purchase {
            amount: reference::AMOUNT,
            pin: reference::PIN.into(),
        };
        for _ in &uns {
            let r = run_transaction(&mut card, &mut terminal, &mut channel, &mut issuer, &purchase, &mut clock);
            ensure(r.outcome == Outcome::Dispense, format!("case {case}: genuine use {:?}", r.outcome))?;
        }
        for req in rec.0.borrow().iter() {
            let resp = issuer.authorize(req, &clock);
            ensure(resp.reason == Some(DeclineReason::Replay), format!("case {case}: replay got {:?}", resp.reason))?;
        }
    }
    Ok(())
}

fn predict_generate(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let clock = SimClock::default();
    for case in 0..200 {
        // Counter
        let tick = rng.random_range(1000..10_000u64);
        let c = CounterPrefix::new(rng.random_range(0..1 << 17), tick, rng.random_range(0..tick << 15), 0.0, 0);
        let t0 = rng.random_range(0..1u64 << 40);
        let cal: Vec<TimedUn> = (0..4)
            .map(|i| t0 + i * rng.random_range(1..5_000_000))
            .map(|t| TimedUn { at_us: t, un: c.un_at(t) })
            .collect();
        let m = recover_counter(tick, 0, &cal).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let t = t0 + rng.random_range(0..600_000_000);
            if let Some(u) = m.un_at_exact(t) {
                ensure(u == c.un_at(t), format!("case {case}: counter mispredicted"))?;
            }
        }
        for o in &cal {
            ensure(m.un_at_exact(o.at_us) == Some(o.un), format!("case {case}: calibration not reproduced"))?;
        }

        // Truncated LCG
        let mut g = UnGenerator::trunc_lcg(rng.next_u32());
        let cal: Vec<TimedUn> = (0..2).map(|i| TimedUn { at_us: i, un: g.next_un(&clock) }).collect();
        let want: Vec<Un> = (0..6).map(|_| g.next_un(&clock)).collect();
        ensure(
            predict(&PredictorProfile::TruncLcg, &cal, 6, 0) == Ok(Prediction::Sequence(want)),
            format!("case {case}: LCG"),
        )?;

        // Time-seeded, both RTC variants
        let epoch = rng.random_range(1_000_000_000..2_000_000_000u64);
        let boot = SimClock::at_ms(rng.random_range(0..86_400_000));
        for battery in [false, true] {
            let mut g = UnGenerator::TimeSeeded(TimeSeeded::new(epoch, battery, &boot));
            let cal: Vec<TimedUn> = (0..2).map(|i| TimedUn { at_us: i, un: g.next_un(&boot) }).collect();
            let want: Vec<Un> = (0..4).map(|_| g.next_un(&boot)).collect();
            let s = if battery { epoch + boot.now_s() } else { epoch };
            let profile = PredictorProfile::TimeSeeded { boot_seconds: s.saturating_sub(2)..=s + 2 };
            ensure(
                predict(&profile, &cal, 4, 0) == Ok(Prediction::Sequence(want)),
                format!("case {case}: time-seeded, battery {battery}"),
            )?;
        }

        // Book 4 after a reboot
        let txn = rng.next_u32();
        let mut g = UnGenerator::Book4(Book4Suggested::new(4, txn));
        g.observe_arqc(&rng.random());
        let at = SimClock::at_ms(rng.random_range(0..1u64 << 40));
        g.reboot(&at);
        let p = predict(&PredictorProfile::Book4PostReboot { txn_counter: txn }, &[], 1, at.now_s());
        ensure(p == Ok(Prediction::Value(g.next_un(&at))), format!("case {case}: book4"))?;
    }
    Ok(())
}

fn stuck_bit_rescan(rng: &mut ChaCha20Rng) -> Result<(), String> {
    for case in 0..1000 {
        let zero = rng.next_u32() & rng.next_u32();
        let one = rng.next_u32() & rng.next_u32() & !zero;
        let seq: Vec<UnObservation> = (0..rng.random_range(1..40u64))
            .map(|i| UnObservation::new(i * 1000, Un((rng.next_u32() & !zero) | one)))
            .collect();
        let s = detect_stuck_bits(&seq).map_err(|e| e.to_string())?;
        for bit in 0..32 {
            let m = 1u32 << bit;
            let ones = seq.iter().filter(|o| o.un.0 & m != 0).count();
            ensure((s.zero_mask & m != 0) == (ones == 0), format!("case {case}: bit {bit} zero flag"))?;
            ensure((s.one_mask & m != 0) == (ones == seq.len()), format!("case {case}: bit {bit} one flag"))?;
        }
    }
    Ok(())
}

fn properties() -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(0x00AC_CE97);
    let n = mac_suites(&mut rng)?;
    atc_monotonic(&mut rng)?;
    replay_rejection(&mut rng)?;
    predict_generate(&mut rng)?;
    stuck_bit_rescan(&mut rng)?;
    Ok(format!(
        "MAC round trip, bit flips and field binding over {n} cases; ATC monotonicity; replay rejection; \
         predict after generate for counter, LCG, time-seeded, Book 4; stuck-bit re-scan"
    ))
}

fn fixtures_stable() -> Check {
    let o = Command::new(env!("CARGO_BIN_EXE_preplay"))
        .args(["gen-fixtures", "--check"])
        .current_dir(root())
        .output()
        .map_err(|e| e.to_string())?;
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    ensure(o.status.success(), out.trim().replace('\n', "; "))?;
    Ok(format!("{} files byte-identical", out.lines().count()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("Palma log reconstruction", palma_log),
        ("Characteristic C", characteristic_c),
        ("Indistinguishability experiment", indistinguishable),
        ("Attack efficacy matrix", efficacy),
        ("Countermeasure effects", countermeasures),
        ("Conformance gap", conformance_gap),
        ("Skim throughput", skim_throughput),
        ("Property suites", properties),
        ("Fixture stability", fixtures_stable),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
