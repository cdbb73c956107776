//! Reference personalisation used by scenarios, fixtures and tests.

use super::card::{Card, CardProfile};
use super::issuer::Issuer;
use super::terminal::{Terminal, TerminalConfig, TerminalMode};
use crate::countermeasures::PolicySet;
use crate::emv::{sign_static_data, Atc, CardOptions, Iad, KeyedSigner, StaticCardData, TransactionContext, Tvr, Udk, Un};
use crate::unzoo::UnGenerator;

pub const PAN: &str = "4000123412341234";
pub const PIN: &str = "1234";
pub const BALANCE: u64 = 100_000_000;
/// 2011-06-29, Palma de Mallorca, euros.
pub const DATE: u32 = 20110629;
pub const COUNTRY: u16 = 724;
pub const CURRENCY: u16 = 978;
pub const AMOUNT: u64 = 3000;
pub const SAMPLE_JITTER_US: u64 = 25_000;

pub fn issuer_signer() -> KeyedSigner {
    KeyedSigner::new(*b"issuer-sda-key\x00\x01")
}

pub fn udk() -> Udk {
    Udk::new(std::array::from_fn(|i| i as u8))
}

pub fn base_iad() -> Iad {
    Iad::new(vec![0x00, 0x0A, 0x03, 0xA0, 0x00]).expect("fixed length")
}

pub fn records(pan: &str) -> Vec<Vec<u8>> {
    vec![
        [b"5A".as_slice(), pan.as_bytes()].concat(),
        b"5F24 271231".to_vec(),
        b"8E 0000000000000000 4203 1F03".to_vec(),
    ]
}

pub fn card_profile(pan: &str, udk: Udk, pin: &str, options: CardOptions, issuer: &KeyedSigner) -> CardProfile {
    let mut static_data = StaticCardData::new(pan, 202101, 202712, options, records(pan)).expect("valid reference data");
    static_data.sda_signature = sign_static_data(&static_data.records, issuer);
    CardProfile {
        static_data,
        udk,
        pin: pin.to_string(),
        iad: base_iad(),
        icc_key: (options == CardOptions::DdaCapable).then(|| issuer.icc_signer(pan)),
    }
}

pub fn card(atc: u16) -> Card {
    Card::new(card_profile(PAN, udk(), PIN, CardOptions::SdaOnly, &issuer_signer()), Atc(atc))
}

pub fn terminal_config() -> TerminalConfig {
    TerminalConfig {
        country: COUNTRY,
        currency: CURRENCY,
        date: DATE,
        mode: TerminalMode::AtmOnlinePin,
        verify_sda: false,
        atc_commitment: false,
        issuer_nonce: false,
        sample_jitter_us: SAMPLE_JITTER_US,
    }
}

pub fn terminal(source: UnGenerator, seed: u64) -> Terminal {
    Terminal::new(terminal_config(), source, issuer_signer(), seed)
}

pub fn issuer(policies: PolicySet, seed: u64) -> Issuer {
    let mut issuer = Issuer::new(issuer_signer(), policies, seed);
    issuer.open_account(PAN, udk(), PIN, BALANCE);
    issuer
}

pub fn ctx(un: Un) -> TransactionContext {
    TransactionContext::new(AMOUNT, CURRENCY, DATE, COUNTRY, Tvr::empty(), un).expect("valid reference context")
}
