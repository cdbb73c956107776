//! Skimming, the pre-play card, network tampering and campaigns.

mod campaign;
mod experiment;
mod mitm;
mod preplay;
mod skim;

pub use campaign::{run_campaign, AttemptRecord, AuditSummary, CampaignOutput, CampaignReport, ExperimentSummary};
pub use experiment::{indistinguishability_experiment, ExperimentError, ExperimentReport, ExperimentSetup, Verdict};
pub use mitm::{mitm_rewrite_un, MitmTrigger, TriggerKind, UnRewriter};
pub use preplay::{synchronize, AttackCardConfig, PreplayCard, PreplayStats, SyncConfig, SyncError, Timing};
pub use skim::{skim, PreplayEntry, PreplayTable, SkimBudget, SkimError, AUTH_TIME_LIMIT_US, HARVEST_COST_US};

use crate::actors::{TerminalConfig, TerminalMode};
use crate::emv::{TransactionContext, Tvr, Un};

/// TVR the terminal will send when the card behaves as a genuine one.
pub fn expected_tvr(config: &TerminalConfig) -> Tvr {
    Tvr::empty()
        .with(Tvr::SDA_NOT_VERIFIED, !config.verify_sda)
        .with(Tvr::ONLINE_PIN_ENTERED, config.mode == TerminalMode::AtmOnlinePin)
}

/// Context the attacker harvests for: everything but the UN is known.
pub fn template_context(config: &TerminalConfig, amount: u64) -> TransactionContext {
    TransactionContext::new(
        amount,
        config.currency,
        config.date,
        config.country,
        expected_tvr(config),
        Un(0),
    )
    .expect("terminal date validated at configuration")
}
