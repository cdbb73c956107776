use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::experiment::{indistinguishability_experiment, ExperimentSetup, Verdict};
use super::mitm::{mitm_rewrite_un, MitmTrigger, TriggerKind};
use super::preplay::{AttackCardConfig, PreplayCard, SyncConfig, Timing};
use super::skim::{skim, SkimBudget};
use super::template_context;
use crate::actors::{
    genuine_delay_us, reference, run_transaction, sample_offset_us, Card, CardCommand, Channel, Issuer,
    IssuerLogRecord, Outcome, Purchase, Terminal, Transcript, TERMINAL_STEP_US,
};
use crate::countermeasures::{audit_atc_gaps, audit_settlement, conformance_2cm085, AuditFinding, ConformanceResult, FindingKind};
use crate::emv::{Atc, CardOptions, Tvr, Udk, Un};
use crate::scenario::ScenarioConfig;
use crate::unzoo::{
    char_c_postprocess, predict, recover_counter, GeneratorConfig, Prediction, PredictorProfile, SimClock, TimedUn,
    UnGenerator, UnSource, COUNTER_BITS, COUNTER_MODULUS,
};

const HOUR_US: u64 = 3_600_000_000;
/// How far ahead of the last probe the counter cash-out is planned.
const PLAN_AHEAD_US: u64 = 600_000_000;
const GENUINE_AMOUNT: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub index: u64,
    pub victim_pan: String,
    pub outcome: Outcome,
    pub cashout_un: Option<Un>,
    /// Entries actually harvested.
    pub harvested: usize,
    /// Targets were predicted rather than guessed.
    pub calibrated: bool,
    pub dda_replayed: bool,
    pub stall_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub findings: usize,
    pub preplay_approvals: usize,
    pub preplay_flagged: usize,
    pub genuine_approvals: usize,
    pub genuine_flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentSummary {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub tc_iad_differs: bool,
    pub compared_entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignReport {
    pub scenario: String,
    pub seed: u64,
    pub generator: String,
    pub attempts: u64,
    pub dispenses: u64,
    pub dispense_rate: f64,
    pub declines_by_reason: BTreeMap<String, u64>,
    pub fails_by_reason: BTreeMap<String, u64>,
    pub feigned_failures: u64,
    pub sync_failures: u64,
    pub calibration_failures: u64,
    pub partial_tables: u64,
    pub amount_stolen: u64,
    pub online_messages: u64,
    pub atc_gaps_flagged: usize,
    pub audit: Option<AuditSummary>,
    pub conformance: ConformanceResult,
    pub experiment: Option<ExperimentSummary>,
}

#[derive(Clone, Debug)]
pub struct CampaignOutput {
    pub report: CampaignReport,
    pub transcripts: Vec<(String, Transcript)>,
    pub issuer_log: Vec<IssuerLogRecord>,
    pub audit_findings: Vec<AuditFinding>,
    pub attempts: Vec<AttemptRecord>,
}

struct Plan {
    targets: Vec<Un>,
    timing: Timing,
    calibrated: bool,
    /// Planned sampling instant, for attacks that need one.
    aim_us: Option<u64>,
}

fn attempt_rng(seed: u64, i: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ (i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn rtc_error(rng: &mut ChaCha20Rng, half_us: i64) -> i64 {
    if half_us == 0 {
        0
    } else {
        rng.random_range(-half_us..=half_us)
    }
}

fn purchase(amount: u64) -> Purchase {
    Purchase {
        amount,
        pin: reference::PIN.into(),
    }
}

struct Attempt<'a> {
    sc: &'a ScenarioConfig,
    index: u64,
    rng: ChaCha20Rng,
    clock: SimClock,
    issuer: &'a mut Issuer,
    messages: u64,
    feigned: u32,
    sync_failures: u32,
    transcripts: Option<&'a mut Vec<(String, Transcript)>>,
}

impl Attempt<'_> {
    fn keep(&mut self, label: &str, t: &Transcript) {
        if let Some(v) = self.transcripts.as_deref_mut() {
            v.push((format!("attempt-{:05}/{label}", self.index), t.clone()));
        }
    }

    fn rtc_half_us(&self) -> i64 {
        (self.sc.attack.rtc_resolution_ms * 1000.0 / 2.0).round() as i64
    }

    /// Balance enquiries with the attacker's own card, reading the UN off the
    /// transaction and the time off the attacker's clock.
    fn probe(&mut self, terminal: &mut Terminal, n: usize) -> Vec<TimedUn> {
        let pan = format!("5{:015}", self.index);
        let udk = Udk::new(std::array::from_fn(|_| self.rng.random()));
        self.issuer.open_account(&pan, udk, reference::PIN, reference::BALANCE);
        let profile = reference::card_profile(&pan, udk, reference::PIN, CardOptions::SdaOnly, &reference::issuer_signer());
        let mut card = Card::new(profile, Atc(1));
        let half = self.rtc_half_us();
        let mut out = Vec::new();
        for j in 0..n {
            self.clock.advance_us(self.rng.random_range(20_000_000..60_000_000));
            let mut channel = Channel::new();
            let r = run_transaction(&mut card, terminal, &mut channel, self.issuer, &purchase(0), &mut self.clock);
            self.messages += channel.messages;
            self.keep(&format!("probe{}", j + 1), &r.transcript);
            if let (Some(at), Some(un)) = (r.sampled_at_us, r.un) {
                let err = rtc_error(&mut self.rng, half);
                out.push(TimedUn {
                    at_us: (at as i64 + err).max(0) as u64,
                    un,
                });
            }
        }
        out
    }

    fn guesses(&mut self, k: usize) -> Plan {
        let char_c = matches!(self.sc.generator, GeneratorConfig::CharC);
        let targets = (0..k)
            .map(|_| {
                let raw = self.rng.next_u32();
                if char_c {
                    char_c_postprocess(raw)
                } else {
                    Un(raw)
                }
            })
            .collect();
        Plan {
            targets,
            timing: Timing::Immediate,
            calibrated: false,
            aim_us: None,
        }
    }

    fn sequence_plan(&mut self, profile: PredictorProfile, terminal: &mut Terminal, k: usize) -> Plan {
        let cal = self.probe(terminal, 2);
        match predict(&profile, &cal, k, 0) {
            Ok(Prediction::Sequence(targets)) => Plan {
                targets,
                timing: Timing::Immediate,
                calibrated: true,
                aim_us: None,
            },
            _ => self.guesses(k),
        }
    }

    fn plan(&mut self, terminal: &mut Terminal) -> Plan {
        let k = self.sc.attack.table_size;
        if let Some(m) = &self.sc.attack.mitm {
            let un = m.replacement_un().unwrap_or_else(|| Un(self.rng.next_u32()));
            return Plan {
                targets: vec![un],
                timing: Timing::Immediate,
                calibrated: true,
                aim_us: None,
            };
        }
        match &self.sc.generator {
            GeneratorConfig::CounterPrefix { .. } => {
                let tick = self.sc.generator.tick_us().expect("counter has a tick");
                let cal = self.probe(terminal, 3);
                let slack = self.rtc_half_us() as u64 + 1;
                match recover_counter(tick, slack, &cal) {
                    Ok(model) => {
                        let aim = self.clock.now_us() + PLAN_AHEAD_US;
                        let mask = COUNTER_MODULUS as u32 - 1;
                        let c0 = model.un_at(aim).0 & mask;
                        let first = c0 + COUNTER_MODULUS as u32 - (k / 2) as u32;
                        let targets = (0..k as u32)
                            .map(|j| Un((model.prefix17 << COUNTER_BITS) | ((first + j) & mask)))
                            .collect();
                        Plan {
                            targets,
                            timing: Timing::Counter { model },
                            calibrated: true,
                            aim_us: Some(aim),
                        }
                    }
                    Err(_) => self.guesses(k),
                }
            }
            GeneratorConfig::TruncLcg => self.sequence_plan(PredictorProfile::TruncLcg, terminal, k),
            GeneratorConfig::TimeSeeded { rtc_epoch_s, rtc_battery } => {
                terminal.un_source.reboot(&self.clock);
                let boot_seconds = if *rtc_battery {
                    let s = rtc_epoch_s + self.clock.now_s();
                    s.saturating_sub(2)..=s + 2
                } else {
                    *rtc_epoch_s..=*rtc_epoch_s
                };
                self.sequence_plan(PredictorProfile::TimeSeeded { boot_seconds }, terminal, k)
            }
            GeneratorConfig::Book4Suggested { .. } => {
                terminal.un_source.reboot(&self.clock);
                let UnGenerator::Book4(g) = &terminal.un_source else {
                    return self.guesses(k);
                };
                // Printed on every receipt.
                let profile = PredictorProfile::Book4PostReboot {
                    txn_counter: g.txn_counter,
                };
                let aim_s = (self.clock.now_us() + PLAN_AHEAD_US) / 1_000_000;
                let first = aim_s - (k / 2) as u64;
                let targets = (first..first + k as u64)
                    .filter_map(|s| match predict(&profile, &[], 1, s) {
                        Ok(Prediction::Value(u)) => Some(u),
                        _ => None,
                    })
                    .collect();
                let aim = aim_s * 1_000_000 + 500_000;
                Plan {
                    targets,
                    timing: Timing::At { sample_us: aim },
                    calibrated: true,
                    aim_us: Some(aim),
                }
            }
            GeneratorConfig::CharC | GeneratorConfig::Strong => self.guesses(k),
        }
    }

    fn run(&mut self) -> (AttemptRecord, Option<(String, u16)>, bool) {
        let sc = self.sc;
        let cash_cfg = sc.cashout_terminal();
        let source = sc.generator.build(self.rng.next_u64(), &self.clock);
        let mut terminal = Terminal::new(cash_cfg.clone(), source, reference::issuer_signer(), self.rng.next_u64());

        let victim_pan = format!("4{:015}", self.index);
        let udk = Udk::new(std::array::from_fn(|_| self.rng.random()));
        self.issuer.open_account(&victim_pan, udk, reference::PIN, reference::BALANCE);
        let options = if sc.attack.victim_dda {
            CardOptions::DdaCapable
        } else {
            CardOptions::SdaOnly
        };
        let profile = reference::card_profile(&victim_pan, udk, reference::PIN, options, &reference::issuer_signer());
        let mut victim = Card::new(profile, Atc(self.rng.random_range(1..=500)));

        let plan = self.plan(&mut terminal);

        // Skimming at a tampered terminal the victim uses.
        let budget = SkimBudget {
            time_budget_us: sc.attack.harvest_budget_ms * 1000,
            cost_per_harvest_us: sc.attack.harvest_cost_ms * 1000,
        };
        let template = template_context(&sc.harvest_terminal(), sc.economics.amount);
        let mut skim_clock = self.clock;
        let table = match skim(&mut victim, &plan.targets, template, reference::PIN, budget, &mut skim_clock) {
            Ok(t) => t,
            Err(_) => {
                let rec = AttemptRecord {
                    index: self.index,
                    victim_pan,
                    outcome: Outcome::Fail(crate::actors::FailReason::CardSilent),
                    cashout_un: None,
                    harvested: 0,
                    calibrated: plan.calibrated,
                    dda_replayed: false,
                    stall_us: None,
                };
                return (rec, None, false);
            }
        };
        let harvested = table.len();
        let partial = table.partial;
        let first_mac = table.by_atc().first().map(|e| e.arqc.mac);

        if sc.attack.genuine_use_between {
            self.clock.advance_us(60_000_000);
            let mut own = Terminal::new(
                cash_cfg.clone(),
                UnGenerator::strong(self.rng.next_u64()),
                reference::issuer_signer(),
                self.rng.next_u64(),
            );
            let mut channel = Channel::new();
            let r = run_transaction(&mut victim, &mut own, &mut channel, self.issuer, &purchase(GENUINE_AMOUNT), &mut self.clock);
            self.messages += channel.messages;
            self.keep("genuine", &r.transcript);
        }

        // Cash-out with the pre-play card.
        let half = self.rtc_half_us();
        let mut cfg = AttackCardConfig::new(table);
        cfg.sync = SyncConfig {
            rtc_resolution_us: (sc.attack.rtc_resolution_ms * 1000.0).round() as u64,
            max_stall_us: sc.attack.max_stall_ms * 1000,
        };
        cfg.timing = plan.timing.clone();
        cfg.sample_offset_us = sample_offset_us(&terminal);
        cfg.jitter_mean_us = cash_cfg.sample_jitter_us / 2;
        cfg.rtc_error_us = rtc_error(&mut self.rng, half);
        cfg.expect_commitment = cash_cfg.atc_commitment;
        let mut channel = Channel::new();
        if let Some(m) = &sc.attack.mitm {
            let un = plan.targets[0];
            cfg.ignore_un = Some(un);
            let trigger = match (m.trigger, first_mac) {
                (TriggerKind::Arqc, Some(mac)) => MitmTrigger::Arqc(mac),
                _ => MitmTrigger::Pan(victim_pan.clone()),
            };
            mitm_rewrite_un(&mut channel, trigger, un);
        }
        let lead = TERMINAL_STEP_US + genuine_delay_us(&CardCommand::ReadRecords) + cfg.sample_offset_us + cfg.jitter_mean_us;
        match plan.aim_us {
            Some(aim) => {
                let slack = self.rng.random_range(0..=sc.attack.insertion_slack_ms * 1000);
                self.clock.advance_to_us(aim.saturating_sub(lead + slack));
            }
            None => self.clock.advance_us(self.rng.random_range(60_000_000..120_000_000)),
        }
        let mut card = PreplayCard::new(cfg);
        let r = run_transaction(
            &mut card,
            &mut terminal,
            &mut channel,
            self.issuer,
            &purchase(sc.economics.amount),
            &mut self.clock,
        );
        self.messages += channel.messages;
        self.keep("cashout", &r.transcript);

        let dda_replayed = sc.attack.victim_dda && r.ctx.is_some_and(|c| !c.tvr.has(Tvr::DDA_FAILED));
        let key = r
            .dispensed()
            .then(|| r.tc.as_ref().map(|tc| (victim_pan.clone(), tc.atc.0)))
            .flatten();
        let rec = AttemptRecord {
            index: self.index,
            victim_pan,
            outcome: r.outcome,
            cashout_un: r.un,
            harvested,
            calibrated: plan.calibrated,
            dda_replayed,
            stall_us: card.stats.last_stall_us,
        };
        self.feigned = card.stats.feigned;
        self.sync_failures = card.stats.sync_failures;
        (rec, key, partial)
    }
}

/// Runs `campaign_attempts` independent skim-and-cash-out attempts against
/// one issuer. Transcripts are kept for the first `transcript_limit`.
pub fn run_campaign(sc: &ScenarioConfig, transcript_limit: usize) -> CampaignOutput {
    let mut issuer = Issuer::new(reference::issuer_signer(), sc.policies, sc.seed ^ 0x5EED_0F15_5BE4);
    let mut transcripts = Vec::new();
    let mut attempts = Vec::new();
    let mut preplay_keys: BTreeSet<(String, u16)> = BTreeSet::new();
    let mut report = CampaignReport {
        scenario: sc.name.clone(),
        seed: sc.seed,
        generator: sc.generator.kind().to_string(),
        attempts: sc.attack.campaign_attempts,
        dispenses: 0,
        dispense_rate: 0.0,
        declines_by_reason: BTreeMap::new(),
        fails_by_reason: BTreeMap::new(),
        feigned_failures: 0,
        sync_failures: 0,
        calibration_failures: 0,
        partial_tables: 0,
        amount_stolen: 0,
        online_messages: 0,
        atc_gaps_flagged: 0,
        audit: None,
        conformance: generator_conformance(&sc.generator, sc.seed),
        experiment: None,
    };

    for i in 0..sc.attack.campaign_attempts {
        let mut rng = attempt_rng(sc.seed, i);
        let t0 = rng.random_range(8 * HOUR_US..18 * HOUR_US);
        let mut a = Attempt {
            sc,
            index: i,
            rng,
            clock: SimClock::at_us(t0),
            issuer: &mut issuer,
            messages: 0,
            feigned: 0,
            sync_failures: 0,
            transcripts: (i < transcript_limit as u64).then_some(&mut transcripts),
        };
        let (rec, key, partial) = a.run();
        report.online_messages += a.messages;
        report.feigned_failures += u64::from(a.feigned);
        report.sync_failures += u64::from(a.sync_failures);
        report.partial_tables += u64::from(partial);
        if !rec.calibrated {
            let guessable = matches!(sc.generator, GeneratorConfig::CharC | GeneratorConfig::Strong);
            report.calibration_failures += u64::from(!guessable);
        }
        match rec.outcome {
            Outcome::Dispense => {
                report.dispenses += 1;
                report.amount_stolen += sc.economics.amount;
            }
            Outcome::Decline(r) => *report.declines_by_reason.entry(r.as_str().into()).or_default() += 1,
            Outcome::Fail(f) => *report.fails_by_reason.entry(f.as_str().into()).or_default() += 1,
        }
        if let Some(k) = key {
            preplay_keys.insert(k);
        }
        attempts.push(rec);
    }
    report.dispense_rate = report.dispenses as f64 / report.attempts as f64;
    report.atc_gaps_flagged = issuer.atc_gaps.len();

    let mut audit_findings = Vec::new();
    if sc.policies.iad_audit {
        audit_findings = audit_settlement(&issuer.settlement);
        let preplay_flagged = audit_findings
            .iter()
            .filter(|f| preplay_keys.contains(&(f.pan.clone(), f.atc)))
            .count();
        let approvals = issuer.settlement.iter().filter(|r| r.approved_online).count();
        report.audit = Some(AuditSummary {
            findings: audit_findings.len(),
            preplay_approvals: preplay_keys.len(),
            preplay_flagged,
            genuine_approvals: approvals - preplay_keys.len(),
            genuine_flagged: audit_findings.len() - preplay_flagged,
        });
    }
    if sc.policies.atc_gap_flagging {
        audit_findings.extend(audit_atc_gaps(&issuer).into_iter().filter(|f| f.finding == FindingKind::AtcGap));
    }

    if sc.attack.experiment {
        let mut setup = ExperimentSetup::default();
        if let (GeneratorConfig::CounterPrefix { prefix, .. }, Some(tick)) = (&sc.generator, sc.generator.tick_us()) {
            setup.prefix17 = *prefix;
            setup.tick_us = tick;
        }
        report.experiment = indistinguishability_experiment(&setup).ok().map(|e| {
            transcripts.extend(e.transcripts.iter().map(|(l, t)| (format!("experiment/{l}"), t.clone())));
            ExperimentSummary {
                verdict: e.verdict,
                tc_iad_differs: e.tc_iad_differs,
                compared_entries: e.compared_entries,
            }
        });
    }

    CampaignOutput {
        report,
        transcripts,
        issuer_log: issuer.log,
        audit_findings,
        attempts,
    }
}

/// Conformance of the scenario's generator: 1000 groups, 30 s apart.
fn generator_conformance(generator: &GeneratorConfig, seed: u64) -> ConformanceResult {
    let mut clock = SimClock::at_us(10 * HOUR_US);
    let mut source = generator.build(seed, &clock);
    conformance_2cm085(&mut source, &mut clock, 1000, 30_000_000)
}
