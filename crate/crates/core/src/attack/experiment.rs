use serde::Serialize;
use thiserror::Error;

use super::preplay::{AttackCardConfig, PreplayCard};
use super::skim::{skim, SkimBudget, SkimError};
use super::template_context;
use crate::actors::{
    genuine_delay_us, reference, run_transaction, sample_offset_us, Card, CardCommand, CardEndpoint, Channel,
    Direction, Issuer, Purchase, Terminal, TransactionResult, Transcript, TERMINAL_STEP_US,
};
use crate::countermeasures::PolicySet;
use crate::emv::{Atc, CardOptions, Udk, Un};
use crate::unzoo::{recover_counter, CounterPrefix, PredictError, SimClock, TimedUn, UnGenerator};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSetup {
    pub udk_a: Udk,
    pub udk_b: Udk,
    pub atc_a: u16,
    pub atc_b: u16,
    /// Date the pre-play table is harvested for; the terminal's date if `None`.
    pub template_date: Option<u32>,
    pub prefix17: u32,
    pub tick_us: u64,
    pub counter_phase_us: u64,
    /// Clock time when the experiment starts.
    pub start_us: u64,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        ExperimentSetup {
            udk_a: reference::udk(),
            udk_b: reference::udk(),
            atc_a: 20,
            atc_b: 20,
            template_date: None,
            prefix17: 0x1E248,
            tick_us: 3300,
            counter_phase_us: 123_456_789,
            start_us: 10 * 3_600_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Identical,
    Distinguishable { step: u8 },
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub verdict: Verdict,
    /// The replayed TC says EXTERNAL AUTHENTICATE never ran, unlike B's.
    /// This is expected and is what the IAD audit looks for.
    pub tc_iad_differs: bool,
    /// Transcript entries compared byte for byte in the final step.
    pub compared_entries: usize,
    pub transcripts: Vec<(String, Transcript)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExperimentError {
    #[error("experiment invalid: {0}")]
    Invalid(String),
    #[error("counter calibration failed: {0}")]
    Predict(#[from] PredictError),
    #[error("skimming failed: {0}")]
    Skim(#[from] SkimError),
}

#[derive(Clone)]
struct Env {
    issuer: Issuer,
    terminal: Terminal,
    clock: SimClock,
}

impl Env {
    fn run(&mut self, card: &mut dyn CardEndpoint, start_us: u64) -> TransactionResult {
        self.clock.advance_to_us(start_us);
        let purchase = Purchase {
            amount: reference::AMOUNT,
            pin: reference::PIN.into(),
        };
        run_transaction(
            card,
            &mut self.terminal,
            &mut Channel::new(),
            &mut self.issuer,
            &purchase,
            &mut self.clock,
        )
    }
}

fn card(udk: &Udk, atc: u16) -> Card {
    let profile = reference::card_profile(
        reference::PAN,
        *udk,
        reference::PIN,
        CardOptions::SdaOnly,
        &reference::issuer_signer(),
    );
    Card::new(profile, Atc(atc))
}

/// Transcript without the final TC payload.
fn comparable(t: &Transcript) -> Vec<(Direction, &'static str, Vec<u8>)> {
    t.entries()
        .iter()
        .filter(|e| !(e.dir == Direction::CardToTerminal && e.msg == "GENERATE_AC_TC"))
        .map(|e| (e.dir, e.msg, e.payload.clone()))
        .collect()
}

/// Two cards with the same key and ATC, one of them cloned into a pre-play
/// card through skimming, compared transaction by transaction.
pub fn indistinguishability_experiment(setup: &ExperimentSetup) -> Result<ExperimentReport, ExperimentError> {
    if setup.atc_a != setup.atc_b {
        return Err(ExperimentError::Invalid("cards must start with the same ATC".into()));
    }
    let mut config = reference::terminal_config();
    config.sample_jitter_us = 0;
    let counter = CounterPrefix::new(setup.prefix17, setup.tick_us, setup.counter_phase_us, 0.0, 0);
    let mut issuer = Issuer::new(reference::issuer_signer(), PolicySet::default(), 1);
    issuer.open_account(reference::PAN, setup.udk_b, reference::PIN, reference::BALANCE);
    let env0 = Env {
        issuer,
        terminal: Terminal::new(config, UnGenerator::CounterPrefix(counter), reference::issuer_signer(), 1),
        clock: SimClock::at_us(setup.start_us),
    };
    let mut a = card(&setup.udk_a, setup.atc_a);
    let mut b = card(&setup.udk_b, setup.atc_b);
    let schedule = [setup.start_us + 10_000_000, setup.start_us + 70_000_000];
    let mut transcripts = Vec::new();

    // 1-2: two transactions on each card in identical environments.
    let mut env_a = env0.clone();
    let mut env_b = env0;
    let ra: Vec<TransactionResult> = schedule.iter().map(|&t| env_a.run(&mut a, t)).collect();
    let rb: Vec<TransactionResult> = schedule.iter().map(|&t| env_b.run(&mut b, t)).collect();
    for (i, r) in ra.iter().enumerate() {
        transcripts.push((format!("step1/A{}", i + 1), r.transcript.clone()));
    }
    for (i, r) in rb.iter().enumerate() {
        transcripts.push((format!("step2/B{}", i + 1), r.transcript.clone()));
    }
    // 3: same keys give the same GENERATE AC answers.
    if ra.iter().zip(&rb).any(|(x, y)| x.transcript != y.transcript) {
        return Ok(ExperimentReport {
            verdict: Verdict::Distinguishable { step: 3 },
            tc_iad_differs: false,
            compared_entries: 0,
            transcripts,
        });
    }

    // 4: predict the next two UNs and skim them from A.
    let calibration: Vec<TimedUn> = rb
        .iter()
        .filter_map(|r| Some(TimedUn { at_us: r.sampled_at_us?, un: r.un? }))
        .collect();
    let model = recover_counter(setup.tick_us, 0, &calibration)?;
    let lead = TERMINAL_STEP_US + genuine_delay_us(&CardCommand::ReadRecords) + sample_offset_us(&env_b.terminal);
    let mut plan: Vec<(u64, Un)> = Vec::new();
    let mut from = env_b.clock.now_us() + 30_000_000;
    for _ in 0..2 {
        let (start, un) = (from..from + 10_000_000)
            .step_by(1_000)
            .find_map(|s| model.un_at_exact(s + lead).map(|u| (s, u)))
            .ok_or_else(|| ExperimentError::Invalid("no exactly predictable start time".into()))?;
        plan.push((start, un));
        from = start + 60_000_000;
    }
    let mut template = template_context(&env_b.terminal.config, reference::AMOUNT);
    if let Some(d) = setup.template_date {
        template.date = d;
    }
    let targets: Vec<Un> = plan.iter().map(|p| p.1).collect();
    let table = skim(
        &mut a,
        &targets,
        template,
        reference::PIN,
        SkimBudget::default(),
        &mut SimClock::default(),
    )?;

    // 5: program the pre-play card.
    let mut preplay = PreplayCard::new(AttackCardConfig::new(table));

    // 6-7: B and the pre-play card in identical environments.
    let mut env6 = env_b.clone();
    let mut env7 = env_b;
    let r6: Vec<TransactionResult> = plan.iter().map(|&(s, _)| env6.run(&mut b, s)).collect();
    let r7: Vec<TransactionResult> = plan.iter().map(|&(s, _)| env7.run(&mut preplay, s)).collect();
    for (i, r) in r6.iter().enumerate() {
        transcripts.push((format!("step6/B{}", i + 1), r.transcript.clone()));
    }
    for (i, r) in r7.iter().enumerate() {
        transcripts.push((format!("step7/P{}", i + 1), r.transcript.clone()));
    }

    // 8: compare.
    let mut compared = 0;
    let mut same = true;
    let mut tc_iad_differs = false;
    for (x, y) in r6.iter().zip(&r7) {
        let (cx, cy) = (comparable(&x.transcript), comparable(&y.transcript));
        compared += cx.len();
        same &= cx == cy;
        if let (Some(tx), Some(ty)) = (&x.tc, &y.tc) {
            tc_iad_differs |= tx.iad != ty.iad;
        }
    }
    Ok(ExperimentReport {
        verdict: if same {
            Verdict::Identical
        } else {
            Verdict::Distinguishable { step: 8 }
        },
        tc_iad_differs,
        compared_entries: compared,
        transcripts,
    })
}
