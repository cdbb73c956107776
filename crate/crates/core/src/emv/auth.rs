//! Offline data authentication stand-ins.
//!
//! Real cards use RSA for SDA and DDA. Here both are a keyed MAC behind
//! [`SignatureScheme`]: a signature is copyable bytes that verify under the
//! issuer key, which is all the attack exercises.

use super::crypto::{constant_time_eq, hmac_sha256};
use super::types::Un;

pub trait SignatureScheme {
    fn sign(&self, message: &[u8]) -> Vec<u8>;
    fn verify(&self, message: &[u8], signature: &[u8]) -> bool;
}

/// Deterministic keyed signature (HMAC-SHA256).
#[derive(Clone, PartialEq, Eq)]
pub struct KeyedSigner {
    key: [u8; 16],
}

impl std::fmt::Debug for KeyedSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KeyedSigner(..)")
    }
}

impl KeyedSigner {
    pub const fn new(key: [u8; 16]) -> Self {
        KeyedSigner { key }
    }

    /// Per-card DDA key certified by this issuer key.
    pub fn icc_signer(&self, pan: &str) -> KeyedSigner {
        let full = hmac_sha256(&self.key, &[b"ICC", pan.as_bytes()]);
        let mut key = [0u8; 16];
        key.copy_from_slice(&full[..16]);
        KeyedSigner { key }
    }
}

impl SignatureScheme for KeyedSigner {
    fn sign(&self, message: &[u8]) -> Vec<u8> {
        hmac_sha256(&self.key, &[message]).to_vec()
    }

    fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        constant_time_eq(&self.sign(message), signature)
    }
}

fn records_message(records: &[Vec<u8>]) -> Vec<u8> {
    let mut msg = b"SDA".to_vec();
    for r in records {
        msg.extend_from_slice(&(r.len() as u32).to_be_bytes());
        msg.extend_from_slice(r);
    }
    msg
}

pub fn sign_static_data(records: &[Vec<u8>], issuer: &impl SignatureScheme) -> Vec<u8> {
    issuer.sign(&records_message(records))
}

pub fn verify_static_data(records: &[Vec<u8>], signature: &[u8], issuer: &impl SignatureScheme) -> bool {
    issuer.verify(&records_message(records), signature)
}

fn dda_message(un: Un) -> Vec<u8> {
    let mut msg = b"DDA".to_vec();
    msg.extend_from_slice(&un.to_be_bytes());
    msg
}

/// Dynamic signature over the terminal's challenge, as returned by INTERNAL AUTHENTICATE.
pub fn sign_dynamic(icc: &impl SignatureScheme, un: Un) -> Vec<u8> {
    icc.sign(&dda_message(un))
}

pub fn verify_dynamic(icc: &impl SignatureScheme, un: Un, signature: &[u8]) -> bool {
    icc.verify(&dda_message(un), signature)
}
