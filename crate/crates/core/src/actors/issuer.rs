use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::countermeasures::{enforce_atc_commitment, enforce_atc_monotonic, PolicySet};
use crate::emv::{
    compute_arpc, terminal_fields, verify_cryptogram, Arc, Arpc, Atc, Cryptogram, CryptogramKind, KeyedSigner,
    TransactionContext, Tvr, Udk, Un,
};
use crate::unzoo::{SimClock, UnGenerator, UnSource};

const PIN_SALT_LEN: usize = 8;

/// Opaque online-PIN block: salt ‖ H("PIN" ‖ pin ‖ salt) truncated to 8 bytes.
pub fn pin_token(pin: &str, salt: u64) -> Vec<u8> {
    let salt = salt.to_be_bytes();
    let digest = Sha256::new()
        .chain_update(b"PIN")
        .chain_update(pin.as_bytes())
        .chain_update(salt)
        .finalize();
    [salt.as_slice(), &digest[..8]].concat()
}

fn pin_token_matches(pin: &str, token: &[u8]) -> bool {
    if token.len() != PIN_SALT_LEN + 8 {
        return false;
    }
    let salt = u64::from_be_bytes(token[..PIN_SALT_LEN].try_into().expect("length checked"));
    pin_token(pin, salt) == token
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthRequest {
    pub pan: String,
    pub ctx: TransactionContext,
    pub cryptogram: Cryptogram,
    /// Present iff the terminal collected the PIN for online verification.
    pub pin_token: Option<Vec<u8>>,
    /// ATC the card reported through GET DATA before seeing the UN.
    pub committed_atc: Option<Atc>,
}

impl AuthRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.pan.len() as u8];
        out.extend_from_slice(self.pan.as_bytes());
        out.extend_from_slice(&terminal_fields(&self.ctx));
        out.extend_from_slice(&self.cryptogram.to_bytes());
        match &self.pin_token {
            Some(t) => {
                out.push(t.len() as u8);
                out.extend_from_slice(t);
            }
            None => out.push(0),
        }
        match self.committed_atc {
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.to_be_bytes());
            }
            None => out.push(0),
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuthResponse {
    pub arc: Arc,
    /// Absent when the ARQC did not verify.
    pub arpc: Option<Arpc>,
    pub reason: Option<DeclineReason>,
}

impl AuthResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.arc.code().to_vec();
        if let Some(a) = self.arpc {
            out.extend_from_slice(&a.0);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeclineReason {
    UnknownPan,
    BadMac,
    Replay,
    NonceMismatch,
    AtcStale,
    AtcCommitMismatch,
    BadPin,
    InsufficientFunds,
}

impl DeclineReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DeclineReason::UnknownPan => "UNKNOWN_PAN",
            DeclineReason::BadMac => "BAD_MAC",
            DeclineReason::Replay => "REPLAY",
            DeclineReason::NonceMismatch => "NONCE_MISMATCH",
            DeclineReason::AtcStale => "ATC_STALE",
            DeclineReason::AtcCommitMismatch => "ATC_COMMIT_MISMATCH",
            DeclineReason::BadPin => "BAD_PIN",
            DeclineReason::InsufficientFunds => "INSUFFICIENT_FUNDS",
        }
    }
}

impl fmt::Display for DeclineReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the issuer's authorization log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IssuerLogRecord {
    pub date: u32,
    /// Seconds since midnight.
    pub time_s: u32,
    pub pan: String,
    pub atc: u16,
    pub un: Un,
    pub mac: [u8; 8],
    pub amount: u64,
    pub country: u16,
    pub decision: Arc,
    pub reason: Option<DeclineReason>,
}

impl IssuerLogRecord {
    pub const CSV_HEADER: &'static str = "date,time,pan,atc,un,mac,amount,country,decision,reason";

    /// CSV row in the `CSV_HEADER` column order.
    pub fn to_csv_row(&self) -> String {
        let d = self.date;
        let t = self.time_s;
        format!(
            "{:04}-{:02}-{:02},{:02}:{:02}:{:02},{},{},{},{},{},{},{},{}",
            d / 10_000,
            (d / 100) % 100,
            d % 100,
            t / 3600,
            (t / 60) % 60,
            t % 60,
            self.pan,
            self.atc,
            self.un,
            hex::encode_upper(self.mac),
            self.amount,
            self.country,
            match self.decision {
                Arc::Approve => "APPROVE",
                Arc::Decline => "DECLINE",
            },
            self.reason.map_or("", DeclineReason::as_str),
        )
    }
}

/// A completed online transaction's TC as submitted for clearing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettlementRecord {
    pub pan: String,
    pub ctx: TransactionContext,
    pub tc: Cryptogram,
    pub approved_online: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    pub udk: Udk,
    pub pin: String,
    pub balance: u64,
}

/// Issuing bank: keys, balances, ATC history and logs.
#[derive(Clone, Debug)]
pub struct Issuer {
    pub accounts: BTreeMap<String, Account>,
    pub atc_watermark: BTreeMap<String, Atc>,
    pub seen_atcs: BTreeMap<String, BTreeSet<Atc>>,
    pub policies: PolicySet,
    pub signer: KeyedSigner,
    pub log: Vec<IssuerLogRecord>,
    pub settlement: Vec<SettlementRecord>,
    /// ATC jumps observed on approval, as (pan, previous watermark, new ATC).
    pub atc_gaps: Vec<(String, Atc, Atc)>,
    outstanding_nonces: BTreeMap<String, Un>,
    nonce_source: UnGenerator,
}

impl Issuer {
    pub fn new(signer: KeyedSigner, policies: PolicySet, nonce_seed: u64) -> Self {
        Issuer {
            accounts: BTreeMap::new(),
            atc_watermark: BTreeMap::new(),
            seen_atcs: BTreeMap::new(),
            policies,
            signer,
            log: Vec::new(),
            settlement: Vec::new(),
            atc_gaps: Vec::new(),
            outstanding_nonces: BTreeMap::new(),
            nonce_source: UnGenerator::strong(nonce_seed),
        }
    }

    pub fn open_account(&mut self, pan: &str, udk: Udk, pin: &str, balance: u64) {
        self.accounts.insert(
            pan.to_string(),
            Account {
                udk,
                pin: pin.to_string(),
                balance,
            },
        );
    }

    pub fn balance(&self, pan: &str) -> Option<u64> {
        self.accounts.get(pan).map(|a| a.balance)
    }

    pub fn watermark(&self, pan: &str) -> Option<Atc> {
        self.atc_watermark.get(pan).copied()
    }

    /// Issues a fresh UN for the card's next transaction.
    pub fn issue_nonce(&mut self, pan: &str, clock: &SimClock) -> Un {
        let un = self.nonce_source.next_un(clock);
        self.outstanding_nonces.insert(pan.to_string(), un);
        un
    }

    fn check(&mut self, req: &AuthRequest) -> Result<Udk, DeclineReason> {
        let account = self.accounts.get(&req.pan).ok_or(DeclineReason::UnknownPan)?;
        let udk = account.udk;
        if !verify_cryptogram(CryptogramKind::Arqc, &udk, &req.ctx, &req.cryptogram, None) {
            return Err(DeclineReason::BadMac);
        }
        let atc = req.cryptogram.atc;
        if !self.seen_atcs.entry(req.pan.clone()).or_default().insert(atc) {
            return Err(DeclineReason::Replay);
        }
        if self.policies.issuer_nonce && self.outstanding_nonces.remove(&req.pan) != Some(req.ctx.un) {
            return Err(DeclineReason::NonceMismatch);
        }
        if self.policies.atc_monotonic {
            enforce_atc_monotonic(self.watermark(&req.pan), atc)?;
        }
        if self.policies.atc_commitment {
            enforce_atc_commitment(req.committed_atc, atc)?;
        }
        let account = &self.accounts[&req.pan];
        let pin_ok = match &req.pin_token {
            Some(token) => pin_token_matches(&account.pin, token),
            None => !req.ctx.tvr.has(Tvr::CVM_NOT_SUCCESSFUL),
        };
        if !pin_ok {
            return Err(DeclineReason::BadPin);
        }
        if req.ctx.amount > account.balance {
            return Err(DeclineReason::InsufficientFunds);
        }
        Ok(udk)
    }

    /// Decides one authorization request and logs it.
    pub fn authorize(&mut self, req: &AuthRequest, clock: &SimClock) -> AuthResponse {
        let atc = req.cryptogram.atc;
        let response = match self.check(req) {
            Ok(udk) => {
                let account = self.accounts.get_mut(&req.pan).expect("checked");
                account.balance -= req.ctx.amount;
                let prev = self.watermark(&req.pan);
                if let Some(p) = prev.filter(|p| atc.0 > p.0.saturating_add(1)) {
                    if self.policies.atc_gap_flagging {
                        self.atc_gaps.push((req.pan.clone(), p, atc));
                    }
                }
                self.atc_watermark.insert(req.pan.clone(), prev.map_or(atc, |p| p.max(atc)));
                AuthResponse {
                    arc: Arc::Approve,
                    arpc: Some(compute_arpc(&udk, atc, &req.cryptogram.mac, Arc::Approve)),
                    reason: None,
                }
            }
            Err(reason) => {
                let arpc = match (reason, self.accounts.get(&req.pan)) {
                    (DeclineReason::UnknownPan | DeclineReason::BadMac, _) | (_, None) => None,
                    (_, Some(a)) => Some(compute_arpc(&a.udk, atc, &req.cryptogram.mac, Arc::Decline)),
                };
                AuthResponse {
                    arc: Arc::Decline,
                    arpc,
                    reason: Some(reason),
                }
            }
        };
        self.log.push(IssuerLogRecord {
            date: req.ctx.date,
            time_s: clock.time_of_day_s(),
            pan: req.pan.clone(),
            atc: atc.0,
            un: req.ctx.un,
            mac: req.cryptogram.mac,
            amount: req.ctx.amount,
            country: req.ctx.terminal_country,
            decision: response.arc,
            reason: response.reason,
        });
        response
    }

    pub fn settle(&mut self, record: SettlementRecord) {
        self.settlement.push(record);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pin_token_roundtrip() {
        let t = pin_token("1234", 7);
        assert!(pin_token_matches("1234", &t));
        assert!(!pin_token_matches("1235", &t));
        assert_ne!(pin_token("1234", 8), t);
        assert!(!pin_token_matches("1234", &t[1..]));
    }

    #[test]
    fn csv_row_layout() {
        let r = IssuerLogRecord {
            date: 20110629,
            time_s: 10 * 3600 + 37 * 60 + 24,
            pan: "4000123412341234".into(),
            atc: 7,
            un: Un(0xF1246E04),
            mac: [0xab; 8],
            amount: 3000,
            country: 724,
            decision: Arc::Decline,
            reason: Some(DeclineReason::Replay),
        };
        assert_eq!(
            r.to_csv_row(),
            "2011-06-29,10:37:24,4000123412341234,7,F1246E04,ABABABABABABABAB,3000,724,DECLINE,REPLAY"
        );
    }
}
