use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::EmvError;

pub const UDK_LEN: usize = 16;
pub const MAC_LEN: usize = 8;
pub const TVR_LEN: usize = 5;
pub const IAD_MAX_LEN: usize = 32;

/// Card master key shared between a card and its issuer.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Udk([u8; UDK_LEN]);

impl Udk {
    pub const fn new(bytes: [u8; UDK_LEN]) -> Self {
        Udk(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, EmvError> {
        let arr: [u8; UDK_LEN] = bytes
            .try_into()
            .map_err(|_| EmvError::KeyLength(bytes.len()))?;
        Ok(Udk(arr))
    }

    pub fn as_bytes(&self) -> &[u8; UDK_LEN] {
        &self.0
    }
}

impl fmt::Debug for Udk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // key material stays out of logs
        f.write_str("Udk(..)")
    }
}

/// Application transaction counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atc(pub u16);

impl Atc {
    /// The counter value at which a card permanently disables itself.
    pub const LIMIT: Atc = Atc(u16::MAX);

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn next(self) -> Option<Atc> {
        self.0.checked_add(1).map(Atc)
    }

    pub fn to_be_bytes(self) -> [u8; 2] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for Atc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Terminal-generated 32-bit "unpredictable number".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Un(pub u32);

impl Un {
    pub fn value(self) -> u32 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    /// Parses 8 hex digits, case-insensitive.
    pub fn from_hex(s: &str) -> Result<Un, EmvError> {
        let s = s.trim();
        if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(EmvError::UnHex(s.to_string()));
        }
        u32::from_str_radix(s, 16)
            .map(Un)
            .map_err(|_| EmvError::UnHex(s.to_string()))
    }
}

impl fmt::Display for Un {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08X}", self.0)
    }
}

/// Terminal verification results.
///
/// Only the flags below are defined; every other bit must stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Tvr([u8; TVR_LEN]);

impl Tvr {
    /// Offline data authentication (the static signature check) was not performed.
    pub const SDA_NOT_VERIFIED: (usize, u8) = (0, 0x80);
    pub const SDA_FAILED: (usize, u8) = (0, 0x40);
    pub const DDA_FAILED: (usize, u8) = (0, 0x08);
    pub const CVM_NOT_SUCCESSFUL: (usize, u8) = (2, 0x80);
    pub const ONLINE_PIN_ENTERED: (usize, u8) = (2, 0x04);

    const DEFINED: [u8; TVR_LEN] = [0xC8, 0x00, 0x84, 0x00, 0x00];

    pub const fn empty() -> Self {
        Tvr([0; TVR_LEN])
    }

    pub fn from_bytes(bytes: [u8; TVR_LEN]) -> Result<Self, EmvError> {
        if bytes.iter().zip(Self::DEFINED).any(|(b, m)| b & !m != 0) {
            return Err(EmvError::TvrUndefinedBits(bytes));
        }
        Ok(Tvr(bytes))
    }

    pub fn with(mut self, flag: (usize, u8), on: bool) -> Self {
        if on {
            self.0[flag.0] |= flag.1;
        } else {
            self.0[flag.0] &= !flag.1;
        }
        self
    }

    pub fn has(&self, flag: (usize, u8)) -> bool {
        self.0[flag.0] & flag.1 != 0
    }

    pub fn sda_not_verified(&self) -> bool {
        self.has(Self::SDA_NOT_VERIFIED)
    }

    pub fn as_bytes(&self) -> &[u8; TVR_LEN] {
        &self.0
    }
}

/// Issuer application data: proprietary card-to-issuer bytes.
///
/// Byte 0 bit 0 records that EXTERNAL AUTHENTICATE was performed, bit 1 that it
/// succeeded.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Iad(Vec<u8>);

impl Iad {
    const EXT_AUTH_PERFORMED: u8 = 0x01;
    const EXT_AUTH_SUCCEEDED: u8 = 0x02;

    pub fn new(bytes: Vec<u8>) -> Result<Self, EmvError> {
        if bytes.is_empty() || bytes.len() > IAD_MAX_LEN {
            return Err(EmvError::IadLength(bytes.len()));
        }
        Ok(Iad(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn ext_auth_performed(&self) -> bool {
        self.0[0] & Self::EXT_AUTH_PERFORMED != 0
    }

    pub fn ext_auth_succeeded(&self) -> bool {
        self.0[0] & Self::EXT_AUTH_SUCCEEDED != 0
    }

    /// Copy of this IAD with the EXTERNAL AUTHENTICATE bit pair set as given.
    pub fn with_ext_auth(&self, performed: bool, succeeded: bool) -> Iad {
        let mut bytes = self.0.clone();
        bytes[0] &= !(Self::EXT_AUTH_PERFORMED | Self::EXT_AUTH_SUCCEEDED);
        if performed {
            bytes[0] |= Self::EXT_AUTH_PERFORMED;
        }
        if succeeded {
            bytes[0] |= Self::EXT_AUTH_SUCCEEDED;
        }
        Iad(bytes)
    }
}

/// Terminal-supplied fields covered by the cryptogram MAC.
///
/// There is deliberately no terminal identifier or time of day here: those
/// are not bound into the cryptogram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TransactionContext {
    /// Minor currency units.
    pub amount: u64,
    /// ISO 4217 numeric.
    pub currency: u16,
    /// yyyymmdd
    pub date: u32,
    pub terminal_country: u16,
    pub tvr: Tvr,
    pub un: Un,
}

impl TransactionContext {
    pub fn new(
        amount: u64,
        currency: u16,
        date: u32,
        terminal_country: u16,
        tvr: Tvr,
        un: Un,
    ) -> Result<Self, EmvError> {
        validate_date(date)?;
        Ok(TransactionContext {
            amount,
            currency,
            date,
            terminal_country,
            tvr,
            un,
        })
    }

    pub fn with_un(self, un: Un) -> Self {
        TransactionContext { un, ..self }
    }

    /// The cardholder-irrelevant fields an attacker must fix at harvest time.
    pub fn economics_match(&self, other: &TransactionContext) -> bool {
        self.amount == other.amount
            && self.currency == other.currency
            && self.date == other.date
            && self.terminal_country == other.terminal_country
    }
}

pub fn validate_date(date: u32) -> Result<NaiveDate, EmvError> {
    let (y, m, d) = (date / 10_000, (date / 100) % 100, date % 100);
    NaiveDate::from_ymd_opt(y as i32, m, d).ok_or(EmvError::InvalidDate(date))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CryptogramKind {
    Arqc,
    Tc,
    Aac,
}

impl CryptogramKind {
    pub fn tag(self) -> u8 {
        match self {
            CryptogramKind::Aac => 0x00,
            CryptogramKind::Arqc => 0x01,
            CryptogramKind::Tc => 0x02,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x00 => Some(CryptogramKind::Aac),
            0x01 => Some(CryptogramKind::Arqc),
            0x02 => Some(CryptogramKind::Tc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CryptogramKind::Arqc => "ARQC",
            CryptogramKind::Tc => "TC",
            CryptogramKind::Aac => "AAC",
        }
    }
}

/// A typed application cryptogram together with the card data it was computed over.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cryptogram {
    pub kind: CryptogramKind,
    pub mac: [u8; MAC_LEN],
    pub atc: Atc,
    pub iad: Iad,
}

impl Cryptogram {
    /// kind tag ‖ mac ‖ atc ‖ iad length ‖ iad
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + MAC_LEN + 3 + self.iad.as_bytes().len());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.mac);
        out.extend_from_slice(&self.atc.to_be_bytes());
        out.push(self.iad.as_bytes().len() as u8);
        out.extend_from_slice(self.iad.as_bytes());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arpc(pub [u8; MAC_LEN]);

/// Authorization response code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Arc {
    Approve,
    Decline,
}

impl Arc {
    pub fn code(self) -> [u8; 2] {
        match self {
            Arc::Approve => [0x30, 0x30],
            Arc::Decline => [0x30, 0x35],
        }
    }

    pub fn from_code(code: [u8; 2]) -> Result<Self, EmvError> {
        match code {
            [0x30, 0x30] => Ok(Arc::Approve),
            [0x30, 0x35] => Ok(Arc::Decline),
            other => Err(EmvError::UnknownArc(other)),
        }
    }
}

/// Static data authentication support advertised by the card.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardOptions {
    SdaOnly,
    DdaCapable,
}

/// Card records read during card authentication.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StaticCardData {
    pub pan: String,
    /// yyyymm
    pub start_date: u32,
    /// yyyymm
    pub expiry_date: u32,
    pub options: CardOptions,
    pub records: Vec<Vec<u8>>,
    pub sda_signature: Vec<u8>,
}

impl StaticCardData {
    pub fn new(
        pan: &str,
        start_date: u32,
        expiry_date: u32,
        options: CardOptions,
        records: Vec<Vec<u8>>,
    ) -> Result<Self, EmvError> {
        if !(12..=19).contains(&pan.len()) || !pan.bytes().all(|b| b.is_ascii_digit()) {
            return Err(EmvError::InvalidPan(pan.to_string()));
        }
        for ym in [start_date, expiry_date] {
            if !(1..=12).contains(&(ym % 100)) {
                return Err(EmvError::InvalidDate(ym));
            }
        }
        Ok(StaticCardData {
            pan: pan.to_string(),
            start_date,
            expiry_date,
            options,
            records,
            sda_signature: Vec::new(),
        })
    }

    pub fn dda_capable(&self) -> bool {
        self.options == CardOptions::DdaCapable
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.pan.len() as u8);
        out.extend_from_slice(self.pan.as_bytes());
        out.extend_from_slice(&self.start_date.to_be_bytes());
        out.extend_from_slice(&self.expiry_date.to_be_bytes());
        out.push(match self.options {
            CardOptions::SdaOnly => 0x00,
            CardOptions::DdaCapable => 0x01,
        });
        out.push(self.records.len() as u8);
        for r in &self.records {
            out.extend_from_slice(&(r.len() as u16).to_be_bytes());
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&(self.sda_signature.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.sda_signature);
        out
    }
}
