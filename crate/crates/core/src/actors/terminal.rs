use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::emv::KeyedSigner;
use crate::unzoo::UnGenerator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// PIN goes to the issuer; the card never sees it.
    AtmOnlinePin,
    /// PIN is checked by the card via VERIFY PIN.
    PosOfflinePin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalConfig {
    pub country: u16,
    pub currency: u16,
    /// yyyymmdd
    pub date: u32,
    pub mode: TerminalMode,
    pub verify_sda: bool,
    /// Ask the card for its ATC (GET DATA) before the UN is drawn.
    pub atc_commitment: bool,
    /// Take the UN from the issuer instead of the local generator.
    pub issuer_nonce: bool,
    /// The UN is sampled up to this long after the step before it.
    pub sample_jitter_us: u64,
}

#[derive(Clone, Debug)]
pub struct Terminal {
    pub config: TerminalConfig,
    pub un_source: UnGenerator,
    /// Verification side of the issuer's signing key, for SDA and DDA.
    pub issuer_key: KeyedSigner,
    rng: ChaCha20Rng,
    session: u64,
}

impl Terminal {
    pub fn new(config: TerminalConfig, un_source: UnGenerator, issuer_key: KeyedSigner, seed: u64) -> Self {
        Terminal {
            config,
            un_source,
            issuer_key,
            rng: ChaCha20Rng::seed_from_u64(seed),
            session: 0,
        }
    }

    /// Starts a session and returns its sequence number.
    pub fn begin_session(&mut self) -> u64 {
        self.session += 1;
        self.session
    }

    pub fn sample_jitter(&mut self) -> u64 {
        match self.config.sample_jitter_us {
            0 => 0,
            j => self.rng.random_range(0..=j),
        }
    }
}
