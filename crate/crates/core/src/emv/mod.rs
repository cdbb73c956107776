//! EMV domain types and the reference cryptogram profile.

mod auth;
mod crypto;
mod types;

use thiserror::Error;

pub use auth::{
    sign_dynamic, sign_static_data, verify_dynamic, verify_static_data, KeyedSigner, SignatureScheme,
};
pub use crypto::{
    compute_arpc, compute_arpc_raw, compute_cryptogram, derive_session_key, serialize_context,
    serialized_len, terminal_fields, verify_cryptogram, SessionKey, UN_OFFSET,
};
pub use types::{
    validate_date, Arc, Arpc, Atc, CardOptions, Cryptogram, CryptogramKind, Iad, StaticCardData,
    TransactionContext, Tvr, Udk, Un, IAD_MAX_LEN, MAC_LEN, TVR_LEN, UDK_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmvError {
    #[error("key must be 16 bytes, got {0}")]
    KeyLength(usize),
    #[error("IAD length {0} outside 1..=32")]
    IadLength(usize),
    #[error("invalid calendar date {0}")]
    InvalidDate(u32),
    #[error("TVR has undefined bits set: {0:02x?}")]
    TvrUndefinedBits([u8; TVR_LEN]),
    #[error("a TC requires an authorization response code")]
    ArcMissing,
    #[error("an authorization response code is only valid for a TC, not {0}")]
    ArcUnexpected(&'static str),
    #[error("unknown authorization response code {0:02x?}")]
    UnknownArc([u8; 2]),
    #[error("PAN must be 12-19 digits: {0:?}")]
    InvalidPan(String),
    #[error("UN must be 8 hex digits: {0:?}")]
    UnHex(String),
}
