//! Issuer and terminal defences and the UN conformance check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actors::{
    run_transaction, CardEndpoint, Channel, DeclineReason, Issuer, Outcome, Purchase, SettlementRecord, Terminal,
    TransactionResult,
};
use crate::emv::{Atc, Un};
use crate::unzoo::{SimClock, UnSource};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySet {
    /// Decline ARQCs whose ATC is not above the highest approved one.
    pub atc_monotonic: bool,
    /// Record ATC jumps on approval; never declines.
    pub atc_gap_flagging: bool,
    /// Audit settled TCs for a missing EXTERNAL AUTHENTICATE.
    pub iad_audit: bool,
    /// Terminal reads the ATC before the UN; issuer holds the card to it.
    pub atc_commitment: bool,
    /// UN comes from the issuer rather than the terminal.
    pub issuer_nonce: bool,
}

/// Stale-ATC rule: the ATC must exceed the highest one approved so far.
pub fn enforce_atc_monotonic(watermark: Option<Atc>, atc: Atc) -> Result<(), DeclineReason> {
    match watermark {
        Some(w) if atc <= w => Err(DeclineReason::AtcStale),
        _ => Ok(()),
    }
}

/// The ARQC must use the ATC following the one reported by GET DATA.
pub fn enforce_atc_commitment(committed: Option<Atc>, atc: Atc) -> Result<(), DeclineReason> {
    match committed {
        Some(c) if c.0.checked_add(1) == Some(atc.0) => Ok(()),
        _ => Err(DeclineReason::AtcCommitMismatch),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    AtcGap,
    ExtAuthMissing,
    StaleAtc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Advisory,
    High,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditFinding {
    pub pan: String,
    pub atc: u16,
    pub finding: FindingKind,
    pub severity: Severity,
    /// Index of the settlement or log record the finding cites.
    pub record: usize,
}

/// Flags every online-approved TC whose IAD says EXTERNAL AUTHENTICATE was
/// never performed. Only possible after the fact, once TCs are cleared.
pub fn audit_settlement(records: &[SettlementRecord]) -> Vec<AuditFinding> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.approved_online && !r.tc.iad.ext_auth_performed())
        .map(|(i, r)| AuditFinding {
            pan: r.pan.clone(),
            atc: r.tc.atc.0,
            finding: FindingKind::ExtAuthMissing,
            severity: Severity::High,
            record: i,
        })
        .collect()
}

/// Advisory ATC-gap findings from approved authorizations. Never blocks, as
/// offline use can legitimately reorder cryptograms.
pub fn audit_atc_gaps(issuer: &Issuer) -> Vec<AuditFinding> {
    let mut last: BTreeMap<&str, u16> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, r) in issuer.log.iter().enumerate() {
        if r.reason.is_some() {
            if r.reason == Some(DeclineReason::AtcStale) {
                out.push(AuditFinding {
                    pan: r.pan.clone(),
                    atc: r.atc,
                    finding: FindingKind::StaleAtc,
                    severity: Severity::High,
                    record: i,
                });
            }
            continue;
        }
        if let Some(prev) = last.insert(&r.pan, r.atc) {
            if r.atc > prev.saturating_add(1) {
                out.push(AuditFinding {
                    pan: r.pan.clone(),
                    atc: r.atc,
                    finding: FindingKind::AtcGap,
                    severity: Severity::Advisory,
                    record: i,
                });
            }
        }
    }
    out
}

/// Runs a transaction with the terminal forced to read the ATC first.
pub fn atc_commitment_flow(
    card: &mut dyn CardEndpoint,
    terminal: &mut Terminal,
    channel: &mut Channel,
    issuer: &mut Issuer,
    purchase: &Purchase,
    clock: &mut SimClock,
) -> TransactionResult {
    let saved = (terminal.config.atc_commitment, issuer.policies.atc_commitment);
    terminal.config.atc_commitment = true;
    issuer.policies.atc_commitment = true;
    let r = run_transaction(card, terminal, channel, issuer, purchase, clock);
    terminal.config.atc_commitment = saved.0;
    issuer.policies.atc_commitment = saved.1;
    r
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConformanceResult {
    pub pass: bool,
    pub groups: usize,
    pub first_failure: Option<usize>,
}

/// Draws `n_groups` groups of four consecutive transactions' UNs, one
/// transaction every `interval_us`; passes iff each group is all-distinct.
pub fn conformance_2cm085(
    source: &mut dyn UnSource,
    clock: &mut SimClock,
    n_groups: usize,
    interval_us: u64,
) -> ConformanceResult {
    let mut first_failure = None;
    for g in 0..n_groups {
        let mut group: Vec<Un> = Vec::with_capacity(4);
        for _ in 0..4 {
            group.push(source.next_un(clock));
            clock.advance_us(interval_us);
        }
        group.sort_unstable();
        group.dedup();
        if group.len() < 4 && first_failure.is_none() {
            first_failure = Some(g);
        }
    }
    ConformanceResult {
        pass: first_failure.is_none() && n_groups > 0,
        groups: n_groups,
        first_failure,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DdaReplayOutcome {
    pub outcome: Outcome,
    /// The terminal verified a replayed INTERNAL AUTHENTICATE signature.
    pub dda_replayed: bool,
}

/// Pre-play against DDA cards: harvest stores the INTERNAL AUTHENTICATE
/// answer per UN and the pre-play card replays it.
pub fn dda_replay_check(scenario: &crate::scenario::ScenarioConfig) -> DdaReplayOutcome {
    let mut sc = scenario.clone();
    sc.attack.victim_dda = true;
    sc.attack.campaign_attempts = 1;
    sc.attack.mitm = None;
    let out = crate::attack::run_campaign(&sc, 0);
    let a = &out.attempts[0];
    DdaReplayOutcome {
        outcome: a.outcome,
        dda_replayed: a.dda_replayed,
    }
}
