use crate::emv::{
    compute_arpc, compute_cryptogram, sign_dynamic, terminal_fields, Arc, Arpc, Atc, Cryptogram, CryptogramKind,
    Iad, KeyedSigner, StaticCardData, TransactionContext, Udk, Un,
};
use crate::unzoo::SimClock;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CardCommand {
    ReadRecords,
    GetDataAtc,
    InternalAuthenticate(Un),
    GenerateAcArqc(TransactionContext),
    ExternalAuthenticate { arc: Arc, arpc: Arpc },
    GenerateAcTc { ctx: TransactionContext, arc: Arc },
    VerifyPin(String),
}

impl CardCommand {
    pub fn name(&self) -> &'static str {
        match self {
            CardCommand::ReadRecords => "READ_RECORDS",
            CardCommand::GetDataAtc => "GET_DATA_ATC",
            CardCommand::InternalAuthenticate(_) => "INTERNAL_AUTHENTICATE",
            CardCommand::GenerateAcArqc(_) => "GENERATE_AC_ARQC",
            CardCommand::ExternalAuthenticate { .. } => "EXTERNAL_AUTHENTICATE",
            CardCommand::GenerateAcTc { .. } => "GENERATE_AC_TC",
            CardCommand::VerifyPin(_) => "VERIFY_PIN",
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            CardCommand::ReadRecords | CardCommand::GetDataAtc => Vec::new(),
            CardCommand::InternalAuthenticate(un) => un.to_be_bytes().to_vec(),
            CardCommand::GenerateAcArqc(ctx) => terminal_fields(ctx).to_vec(),
            CardCommand::ExternalAuthenticate { arc, arpc } => [arpc.0.as_slice(), &arc.code()].concat(),
            CardCommand::GenerateAcTc { ctx, arc } => [terminal_fields(ctx).as_slice(), &arc.code()].concat(),
            CardCommand::VerifyPin(pin) => pin.as_bytes().to_vec(),
        }
    }
}

/// Card-side failures, each with its own status word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CardError {
    /// Command not legal in the current session phase.
    ConditionsNotSatisfied,
    /// Generic malfunction; what a pre-play card answers when it has nothing to play.
    Malfunction,
}

impl CardError {
    pub fn status_word(self) -> [u8; 2] {
        match self {
            CardError::ConditionsNotSatisfied => [0x69, 0x85],
            CardError::Malfunction => [0x6F, 0x00],
        }
    }
}

pub const SW_OK: [u8; 2] = [0x90, 0x00];
pub const SW_VERIFY_FAILED: [u8; 2] = [0x63, 0x00];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CardResponse {
    Records(StaticCardData),
    Atc(Atc),
    DdaSignature(Vec<u8>),
    Cryptogram(Cryptogram),
    ExternalAuth { ok: bool },
    PinOk(bool),
    Error(CardError),
}

impl CardResponse {
    pub fn payload(&self) -> Vec<u8> {
        match self {
            CardResponse::Records(sd) => sd.to_bytes(),
            CardResponse::Atc(atc) => atc.to_be_bytes().to_vec(),
            CardResponse::DdaSignature(sig) => sig.clone(),
            CardResponse::Cryptogram(c) => c.to_bytes(),
            CardResponse::ExternalAuth { ok } | CardResponse::PinOk(ok) => {
                if *ok { SW_OK } else { SW_VERIFY_FAILED }.to_vec()
            }
            CardResponse::Error(e) => e.status_word().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CardReply {
    pub response: CardResponse,
    /// Processing time before the answer reaches the terminal.
    pub delay_us: u64,
}

/// Anything that can sit in the card slot.
pub trait CardEndpoint {
    /// `None` means the card stays silent.
    fn handle(&mut self, cmd: &CardCommand, clock: &SimClock) -> Option<CardReply>;
}

/// Processing time of a genuine card per command.
pub fn genuine_delay_us(cmd: &CardCommand) -> u64 {
    match cmd {
        CardCommand::ReadRecords => 40_000,
        CardCommand::GetDataAtc => 10_000,
        CardCommand::InternalAuthenticate(_) => 80_000,
        CardCommand::GenerateAcArqc(_) | CardCommand::GenerateAcTc { .. } => 120_000,
        CardCommand::ExternalAuthenticate { .. } => 20_000,
        CardCommand::VerifyPin(_) => 20_000,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Ready,
    AwaitingFinal { atc: Atc, arqc_mac: [u8; 8], ext_auth: Option<bool> },
}

/// Everything personalised into a card at issuance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CardProfile {
    pub static_data: StaticCardData,
    pub udk: Udk,
    pub pin: String,
    /// IAD template; the EXTERNAL AUTHENTICATE bits are managed by the card.
    pub iad: Iad,
    /// DDA key, present only on DDA-capable cards.
    pub icc_key: Option<KeyedSigner>,
}

/// A genuine EMV card.
#[derive(Clone, Debug)]
pub struct Card {
    pub profile: CardProfile,
    atc: Atc,
    disabled: bool,
    phase: Phase,
}

impl Card {
    pub fn new(profile: CardProfile, atc: Atc) -> Self {
        Card {
            disabled: atc == Atc::LIMIT,
            profile,
            atc,
            phase: Phase::Ready,
        }
    }

    /// ATC of the last cryptogram generated.
    pub fn atc(&self) -> Atc {
        self.atc
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    pub fn pan(&self) -> &str {
        &self.profile.static_data.pan
    }

    fn respond(&mut self, cmd: &CardCommand) -> Option<CardResponse> {
        let err = Some(CardResponse::Error(CardError::ConditionsNotSatisfied));
        Some(match cmd {
            CardCommand::ReadRecords => {
                self.phase = Phase::Ready;
                CardResponse::Records(self.profile.static_data.clone())
            }
            CardCommand::GetDataAtc => CardResponse::Atc(self.atc),
            CardCommand::VerifyPin(pin) => CardResponse::PinOk(*pin == self.profile.pin),
            CardCommand::InternalAuthenticate(un) => match &self.profile.icc_key {
                Some(key) => CardResponse::DdaSignature(sign_dynamic(key, *un)),
                None => return err,
            },
            CardCommand::GenerateAcArqc(ctx) => {
                if self.phase != Phase::Ready {
                    return err;
                }
                let atc = Atc(self.atc.0 + 1);
                self.atc = atc;
                if atc == Atc::LIMIT {
                    self.disabled = true;
                    return None;
                }
                let iad = self.profile.iad.with_ext_auth(false, false);
                let c = compute_cryptogram(CryptogramKind::Arqc, &self.profile.udk, ctx, atc, &iad, None)
                    .expect("context was validated on construction");
                self.phase = Phase::AwaitingFinal {
                    atc,
                    arqc_mac: c.mac,
                    ext_auth: None,
                };
                CardResponse::Cryptogram(c)
            }
            CardCommand::ExternalAuthenticate { arc, arpc } => match &mut self.phase {
                Phase::AwaitingFinal { atc, arqc_mac, ext_auth } => {
                    let ok = compute_arpc(&self.profile.udk, *atc, arqc_mac, *arc) == *arpc;
                    *ext_auth = Some(ok);
                    CardResponse::ExternalAuth { ok }
                }
                Phase::Ready => return err,
            },
            CardCommand::GenerateAcTc { ctx, arc } => {
                let Phase::AwaitingFinal { atc, ext_auth, .. } = self.phase else {
                    return err;
                };
                self.phase = Phase::Ready;
                let iad = self
                    .profile
                    .iad
                    .with_ext_auth(ext_auth.is_some(), ext_auth == Some(true));
                let (kind, arc) = match arc {
                    Arc::Approve => (CryptogramKind::Tc, Some(*arc)),
                    Arc::Decline => (CryptogramKind::Aac, None),
                };
                let c = compute_cryptogram(kind, &self.profile.udk, ctx, atc, &iad, arc)
                    .expect("context was validated on construction");
                CardResponse::Cryptogram(c)
            }
        })
    }
}

impl CardEndpoint for Card {
    fn handle(&mut self, cmd: &CardCommand, _clock: &SimClock) -> Option<CardReply> {
        if self.disabled {
            return None;
        }
        let response = self.respond(cmd)?;
        Some(CardReply {
            response,
            delay_us: genuine_delay_us(cmd),
        })
    }
}
