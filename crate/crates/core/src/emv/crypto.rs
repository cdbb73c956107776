//! Reference cryptogram profile.
//!
//! Session keys and MACs are HMAC-SHA256, truncated to 16 and 8 bytes. This
//! does not interoperate with real EMV cards; it only has to be internally
//! consistent and reproducible from the committed test vectors.

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::types::{
    Arc, Arpc, Atc, Cryptogram, CryptogramKind, Iad, TransactionContext, Udk, IAD_MAX_LEN,
    MAC_LEN,
};
use super::EmvError;

type HmacSha256 = Hmac<Sha256>;

pub type SessionKey = [u8; 16];

/// Length of [`serialize_context`] output for an IAD of `iad_len` bytes.
pub const fn serialized_len(iad_len: usize) -> usize {
    8 + 2 + 4 + 2 + 5 + 4 + 2 + 1 + iad_len
}

/// Byte offset of the UN within the serialized context.
pub const UN_OFFSET: usize = 21;

pub(crate) fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

fn mac8(key: &[u8], parts: &[&[u8]]) -> [u8; MAC_LEN] {
    let full = hmac_sha256(key, parts);
    let mut out = [0u8; MAC_LEN];
    out.copy_from_slice(&full[..MAC_LEN]);
    out
}

pub fn derive_session_key(udk: &Udk, atc: Atc) -> SessionKey {
    let full = hmac_sha256(udk.as_bytes(), &[b"SK", &atc.to_be_bytes()]);
    let mut out = [0u8; 16];
    out.copy_from_slice(&full[..16]);
    out
}

/// Canonical layout: amount(8) ‖ currency(2) ‖ date(4) ‖ country(2) ‖ tvr(5) ‖
/// un(4) ‖ atc(2) ‖ iad length(1) ‖ iad, all integers big-endian.
pub fn serialize_context(ctx: &TransactionContext, atc: Atc, iad: &Iad) -> Result<Vec<u8>, EmvError> {
    let iad = iad.as_bytes();
    if iad.is_empty() || iad.len() > IAD_MAX_LEN {
        return Err(EmvError::IadLength(iad.len()));
    }
    let mut out = Vec::with_capacity(serialized_len(iad.len()));
    out.extend_from_slice(&ctx.amount.to_be_bytes());
    out.extend_from_slice(&ctx.currency.to_be_bytes());
    out.extend_from_slice(&ctx.date.to_be_bytes());
    out.extend_from_slice(&ctx.terminal_country.to_be_bytes());
    out.extend_from_slice(ctx.tvr.as_bytes());
    out.extend_from_slice(&ctx.un.to_be_bytes());
    out.extend_from_slice(&atc.to_be_bytes());
    out.push(iad.len() as u8);
    out.extend_from_slice(iad);
    Ok(out)
}

/// The terminal-supplied part of the context (everything before the ATC).
pub fn terminal_fields(ctx: &TransactionContext) -> [u8; UN_OFFSET + 4] {
    let mut out = [0u8; UN_OFFSET + 4];
    out[0..8].copy_from_slice(&ctx.amount.to_be_bytes());
    out[8..10].copy_from_slice(&ctx.currency.to_be_bytes());
    out[10..14].copy_from_slice(&ctx.date.to_be_bytes());
    out[14..16].copy_from_slice(&ctx.terminal_country.to_be_bytes());
    out[16..21].copy_from_slice(ctx.tvr.as_bytes());
    out[21..25].copy_from_slice(&ctx.un.to_be_bytes());
    out
}

fn cryptogram_mac(
    kind: CryptogramKind,
    udk: &Udk,
    ctx: &TransactionContext,
    atc: Atc,
    iad: &Iad,
    arc: Option<Arc>,
) -> Result<[u8; MAC_LEN], EmvError> {
    match (kind, arc) {
        (CryptogramKind::Tc, None) => return Err(EmvError::ArcMissing),
        (CryptogramKind::Arqc | CryptogramKind::Aac, Some(_)) => {
            return Err(EmvError::ArcUnexpected(kind.name()))
        }
        _ => {}
    }
    let body = serialize_context(ctx, atc, iad)?;
    let key = derive_session_key(udk, atc);
    let arc_code = arc.map(Arc::code);
    let arc_bytes: &[u8] = arc_code.as_ref().map_or(&[], |c| c.as_slice());
    Ok(mac8(&key, &[&[kind.tag()], &body, arc_bytes]))
}

/// Computes an application cryptogram. `arc` must be supplied for a TC and only for a TC.
pub fn compute_cryptogram(
    kind: CryptogramKind,
    udk: &Udk,
    ctx: &TransactionContext,
    atc: Atc,
    iad: &Iad,
    arc: Option<Arc>,
) -> Result<Cryptogram, EmvError> {
    let mac = cryptogram_mac(kind, udk, ctx, atc, iad, arc)?;
    Ok(Cryptogram {
        kind,
        mac,
        atc,
        iad: iad.clone(),
    })
}

/// Recomputes the MAC over `ctx` with the ATC and IAD the cryptogram carries.
///
/// Never fails: any malformed combination simply does not verify.
pub fn verify_cryptogram(
    kind: CryptogramKind,
    udk: &Udk,
    ctx: &TransactionContext,
    cryptogram: &Cryptogram,
    arc: Option<Arc>,
) -> bool {
    if cryptogram.kind != kind {
        return false;
    }
    match cryptogram_mac(kind, udk, ctx, cryptogram.atc, &cryptogram.iad, arc) {
        Ok(mac) => constant_time_eq(&mac, &cryptogram.mac),
        Err(_) => false,
    }
}

/// ARPC over the ARQC XOR the raw response code (right-padded with zeros).
pub fn compute_arpc_raw(udk: &Udk, atc: Atc, arqc_mac: &[u8; MAC_LEN], code: [u8; 2]) -> Arpc {
    let mut block = *arqc_mac;
    block[0] ^= code[0];
    block[1] ^= code[1];
    let key = derive_session_key(udk, atc);
    Arpc(mac8(&key, &[&block]))
}

pub fn compute_arpc(udk: &Udk, atc: Atc, arqc_mac: &[u8; MAC_LEN], arc: Arc) -> Arpc {
    compute_arpc_raw(udk, atc, arqc_mac, arc.code())
}

pub(crate) fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
