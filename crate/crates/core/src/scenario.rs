//! Scenario files: generator, terminal, policies, attack and economics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{reference, TerminalConfig, TerminalMode};
use crate::attack::TriggerKind;
use crate::countermeasures::PolicySet;
use crate::emv::{validate_date, Un};
use crate::unzoo::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub generator: GeneratorConfig,
    #[serde(default = "default_mode")]
    pub mode: TerminalMode,
    #[serde(default)]
    pub policies: PolicySet,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub economics: Economics,
}

fn default_name() -> String {
    "unnamed".into()
}

fn default_mode() -> TerminalMode {
    TerminalMode::AtmOnlinePin
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub table_size: usize,
    pub harvest_budget_ms: u64,
    pub harvest_cost_ms: u64,
    pub campaign_attempts: u64,
    /// Resolution of the pre-play card's clock.
    pub rtc_resolution_ms: f64,
    pub max_stall_ms: u64,
    /// The cash-out terminal samples its UN up to this long after PIN entry.
    pub sample_jitter_ms: f64,
    /// Insertion happens up to this long before the planned instant.
    pub insertion_slack_ms: u64,
    /// The victim uses the card once between skimming and cash-out.
    pub genuine_use_between: bool,
    /// Terminal country at cash-out, if not the harvest country.
    pub cashout_country: Option<u16>,
    pub victim_dda: bool,
    pub terminal_verify_sda: bool,
    pub mitm: Option<MitmConfig>,
    /// Also run the two-card indistinguishability experiment.
    pub experiment: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            table_size: 10,
            harvest_budget_ms: 30_000,
            harvest_cost_ms: 280,
            campaign_attempts: 100,
            rtc_resolution_ms: 1.0,
            max_stall_ms: 30_000,
            sample_jitter_ms: 25.0,
            insertion_slack_ms: 1_000,
            genuine_use_between: false,
            cashout_country: None,
            victim_dda: false,
            terminal_verify_sda: false,
            mitm: None,
            experiment: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitmConfig {
    #[serde(default)]
    pub trigger: TriggerKind,
    /// Hex UN the interceptor writes; random per attempt if absent.
    #[serde(default)]
    pub replacement: Option<String>,
}

impl MitmConfig {
    pub fn replacement_un(&self) -> Option<Un> {
        self.replacement.as_deref().and_then(|s| Un::from_hex(s).ok())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Economics {
    pub amount: u64,
    pub currency: u16,
    /// yyyymmdd
    pub date: u32,
    pub country: u16,
}

impl Default for Economics {
    fn default() -> Self {
        Economics {
            amount: reference::AMOUNT,
            currency: reference::CURRENCY,
            date: reference::DATE,
            country: reference::COUNTRY,
        }
    }
}

impl ScenarioConfig {
    pub fn new(generator: GeneratorConfig) -> Self {
        ScenarioConfig {
            name: default_name(),
            seed: 0,
            generator,
            mode: default_mode(),
            policies: PolicySet::default(),
            attack: AttackConfig::default(),
            economics: Economics::default(),
        }
    }

    /// Semantic checks serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generator.validate().map_err(|(f, m)| ConfigError::new(f, m))?;
        let a = &self.attack;
        if a.table_size == 0 {
            return Err(ConfigError::new("attack.table_size", "must be at least 1"));
        }
        if a.harvest_cost_ms == 0 {
            return Err(ConfigError::new("attack.harvest_cost_ms", "must be positive"));
        }
        if a.campaign_attempts == 0 {
            return Err(ConfigError::new("attack.campaign_attempts", "must be at least 1"));
        }
        if !(a.rtc_resolution_ms.is_finite() && a.rtc_resolution_ms >= 0.0) {
            return Err(ConfigError::new("attack.rtc_resolution_ms", "must be a non-negative number"));
        }
        if !(a.sample_jitter_ms.is_finite() && a.sample_jitter_ms >= 0.0) {
            return Err(ConfigError::new("attack.sample_jitter_ms", "must be a non-negative number"));
        }
        if let Some(m) = &a.mitm {
            if let Some(r) = &m.replacement {
                Un::from_hex(r).map_err(|e| ConfigError::new("attack.mitm.replacement", e.to_string()))?;
            }
        }
        if let Some(c) = a.cashout_country {
            if c > 999 {
                return Err(ConfigError::new("attack.cashout_country", "ISO 3166 numeric has three digits"));
            }
        }
        let e = &self.economics;
        validate_date(e.date).map_err(|err| ConfigError::new("economics.date", err.to_string()))?;
        if e.country > 999 {
            return Err(ConfigError::new("economics.country", "ISO 3166 numeric has three digits"));
        }
        if e.currency > 999 {
            return Err(ConfigError::new("economics.currency", "ISO 4217 numeric has three digits"));
        }
        Ok(())
    }

    /// Configuration of the terminal the stolen card is used at.
    pub fn cashout_terminal(&self) -> TerminalConfig {
        TerminalConfig {
            country: self.attack.cashout_country.unwrap_or(self.economics.country),
            currency: self.economics.currency,
            date: self.economics.date,
            mode: self.mode,
            verify_sda: self.attack.terminal_verify_sda,
            atc_commitment: self.policies.atc_commitment,
            issuer_nonce: self.policies.issuer_nonce,
            sample_jitter_us: (self.attack.sample_jitter_ms * 1000.0).round() as u64,
        }
    }

    /// The terminal as the attacker expects it when harvesting.
    pub fn harvest_terminal(&self) -> TerminalConfig {
        TerminalConfig {
            country: self.economics.country,
            ..self.cashout_terminal()
        }
    }
}
