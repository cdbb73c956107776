use serde::Serialize;

use super::card::{genuine_delay_us, CardCommand, CardEndpoint, CardError, CardResponse};
use super::channel::Channel;
use super::issuer::{pin_token, AuthRequest, DeclineReason, Issuer, SettlementRecord};
use super::terminal::{Terminal, TerminalMode};
use super::transcript::{Direction, Transcript};
use crate::emv::{
    verify_dynamic, verify_static_data, Arc, Atc, Cryptogram, CryptogramKind, TransactionContext, Tvr, Un,
};
use crate::unzoo::{SimClock, UnSource};

/// Terminal processing time before each card command.
pub const TERMINAL_STEP_US: u64 = 5_000;
/// Time the cardholder spends entering the PIN.
pub const PIN_ENTRY_US: u64 = 4_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Purchase {
    /// Zero for a balance enquiry.
    pub amount: u64,
    /// PIN typed at the keypad.
    pub pin: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailReason {
    CardSilent,
    CardError,
    /// The card answered a command that should not have been accepted.
    UnexpectedResponse,
    IssuerUnreachable,
    /// Issuer approved but the card asked to decline.
    CardDeclined,
}

impl FailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailReason::CardSilent => "CARD_SILENT",
            FailReason::CardError => "CARD_ERROR",
            FailReason::UnexpectedResponse => "UNEXPECTED_RESPONSE",
            FailReason::IssuerUnreachable => "ISSUER_UNREACHABLE",
            FailReason::CardDeclined => "CARD_DECLINED",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    Dispense,
    Decline(DeclineReason),
    Fail(FailReason),
}

#[derive(Clone, Debug)]
pub struct TransactionResult {
    pub transcript: Transcript,
    pub outcome: Outcome,
    pub un: Option<Un>,
    pub sampled_at_us: Option<u64>,
    pub ctx: Option<TransactionContext>,
    pub arqc: Option<Cryptogram>,
    pub tc: Option<Cryptogram>,
    pub card_error: Option<CardError>,
}

impl TransactionResult {
    fn new() -> Self {
        TransactionResult {
            transcript: Transcript::new(),
            outcome: Outcome::Fail(FailReason::CardSilent),
            un: None,
            sampled_at_us: None,
            ctx: None,
            arqc: None,
            tc: None,
            card_error: None,
        }
    }

    pub fn dispensed(&self) -> bool {
        self.outcome == Outcome::Dispense
    }
}

/// Time from the end of the READ RECORDS reply to the UN sampling instant,
/// before jitter, when the card answers with genuine timing.
pub fn sample_offset_us(terminal: &Terminal) -> u64 {
    let mut t = 0;
    if terminal.config.atc_commitment {
        t += TERMINAL_STEP_US + genuine_delay_us(&CardCommand::GetDataAtc);
    }
    t += PIN_ENTRY_US;
    if terminal.config.mode == TerminalMode::PosOfflinePin {
        t += TERMINAL_STEP_US + genuine_delay_us(&CardCommand::VerifyPin(String::new()));
    }
    t
}

fn exchange(
    card: &mut dyn CardEndpoint,
    cmd: CardCommand,
    result: &mut TransactionResult,
    clock: &mut SimClock,
) -> Result<CardResponse, FailReason> {
    result
        .transcript
        .push(Direction::TerminalToCard, cmd.name(), cmd.payload());
    clock.advance_us(TERMINAL_STEP_US);
    let reply = card.handle(&cmd, clock).ok_or(FailReason::CardSilent)?;
    clock.advance_us(reply.delay_us);
    result
        .transcript
        .push(Direction::CardToTerminal, cmd.name(), reply.response.payload());
    match reply.response {
        CardResponse::Error(e) => {
            result.card_error = Some(e);
            Err(FailReason::CardError)
        }
        r => Ok(r),
    }
}

fn cryptogram_of(r: CardResponse, want: &[CryptogramKind]) -> Result<Cryptogram, FailReason> {
    match r {
        CardResponse::Cryptogram(c) if want.contains(&c.kind) => Ok(c),
        _ => Err(FailReason::UnexpectedResponse),
    }
}

fn run(
    card: &mut dyn CardEndpoint,
    terminal: &mut Terminal,
    channel: &mut Channel,
    issuer: &mut Issuer,
    purchase: &Purchase,
    clock: &mut SimClock,
    result: &mut TransactionResult,
) -> Result<Outcome, FailReason> {
    let session = terminal.begin_session();
    let cfg = terminal.config.clone();

    // Card authentication.
    let sd = match exchange(card, CardCommand::ReadRecords, result, clock)? {
        CardResponse::Records(sd) => sd,
        _ => return Err(FailReason::UnexpectedResponse),
    };
    let mut tvr = Tvr::empty();
    if cfg.verify_sda {
        if !verify_static_data(&sd.records, &sd.sda_signature, &terminal.issuer_key) {
            tvr = tvr.with(Tvr::SDA_FAILED, true);
        }
    } else {
        tvr = tvr.with(Tvr::SDA_NOT_VERIFIED, true);
    }
    let committed_atc = if cfg.atc_commitment {
        match exchange(card, CardCommand::GetDataAtc, result, clock)? {
            CardResponse::Atc(a) => Some(a),
            _ => return Err(FailReason::UnexpectedResponse),
        }
    } else {
        None
    };

    // Cardholder verification.
    clock.advance_us(PIN_ENTRY_US);
    let token = match cfg.mode {
        TerminalMode::AtmOnlinePin => {
            tvr = tvr.with(Tvr::ONLINE_PIN_ENTERED, true);
            Some(pin_token(&purchase.pin, session))
        }
        TerminalMode::PosOfflinePin => {
            match exchange(card, CardCommand::VerifyPin(purchase.pin.clone()), result, clock)? {
                CardResponse::PinOk(true) => {}
                CardResponse::PinOk(false) => tvr = tvr.with(Tvr::CVM_NOT_SUCCESSFUL, true),
                _ => return Err(FailReason::UnexpectedResponse),
            }
            None
        }
    };

    // Authorization.
    let un = if cfg.issuer_nonce {
        result
            .transcript
            .push(Direction::TerminalToIssuer, "NONCE_REQUEST", sd.pan.as_bytes().to_vec());
        let un = channel
            .fetch_nonce(issuer, &sd.pan, clock)
            .ok_or(FailReason::IssuerUnreachable)?;
        result
            .transcript
            .push(Direction::IssuerToTerminal, "NONCE_RESPONSE", un.to_be_bytes().to_vec());
        un
    } else {
        clock.advance_us(terminal.sample_jitter());
        terminal.un_source.next_un(clock)
    };
    result.un = Some(un);
    result.sampled_at_us = Some(clock.now_us());

    if sd.dda_capable() {
        match exchange(card, CardCommand::InternalAuthenticate(un), result, clock)? {
            CardResponse::DdaSignature(sig) => {
                if !verify_dynamic(&terminal.issuer_key.icc_signer(&sd.pan), un, &sig) {
                    tvr = tvr.with(Tvr::DDA_FAILED, true);
                }
            }
            _ => return Err(FailReason::UnexpectedResponse),
        }
    }

    let ctx = TransactionContext::new(purchase.amount, cfg.currency, cfg.date, cfg.country, tvr, un)
        .expect("terminal date validated at configuration");
    result.ctx = Some(ctx);
    let arqc = cryptogram_of(
        exchange(card, CardCommand::GenerateAcArqc(ctx), result, clock)?,
        &[CryptogramKind::Arqc],
    )?;
    terminal.un_source.observe_arqc(&arqc.mac);
    result.arqc = Some(arqc.clone());

    let req = AuthRequest {
        pan: sd.pan.clone(),
        ctx,
        cryptogram: arqc,
        pin_token: token,
        committed_atc,
    };
    result
        .transcript
        .push(Direction::TerminalToIssuer, "AUTH_REQUEST", req.to_bytes());
    let resp = channel
        .authorize(issuer, &req, clock)
        .ok_or(FailReason::IssuerUnreachable)?;
    result
        .transcript
        .push(Direction::IssuerToTerminal, "AUTH_RESPONSE", resp.to_bytes());

    if let Some(arpc) = resp.arpc {
        exchange(card, CardCommand::ExternalAuthenticate { arc: resp.arc, arpc }, result, clock)?;
    }
    let final_ac = cryptogram_of(
        exchange(card, CardCommand::GenerateAcTc { ctx, arc: resp.arc }, result, clock)?,
        &[CryptogramKind::Tc, CryptogramKind::Aac],
    )?;
    result.tc = Some(final_ac.clone());

    match (resp.arc, final_ac.kind) {
        (Arc::Approve, CryptogramKind::Tc) => {
            channel.settle(
                issuer,
                SettlementRecord {
                    pan: sd.pan,
                    ctx,
                    tc: final_ac,
                    approved_online: true,
                },
            );
            Ok(Outcome::Dispense)
        }
        (Arc::Approve, _) => Err(FailReason::CardDeclined),
        (Arc::Decline, _) => Ok(Outcome::Decline(resp.reason.unwrap_or(DeclineReason::BadMac))),
    }
}

/// One ATM/POS transaction: card authentication, cardholder verification,
/// then online authorization and completion.
pub fn run_transaction(
    card: &mut dyn CardEndpoint,
    terminal: &mut Terminal,
    channel: &mut Channel,
    issuer: &mut Issuer,
    purchase: &Purchase,
    clock: &mut SimClock,
) -> TransactionResult {
    let mut result = TransactionResult::new();
    result.outcome = match run(card, terminal, channel, issuer, purchase, clock, &mut result) {
        Ok(o) => o,
        Err(f) => Outcome::Fail(f),
    };
    result
}

/// Same flow with the UN fetched from the issuer just before GENERATE AC.
pub fn run_transaction_issuer_nonce(
    card: &mut dyn CardEndpoint,
    terminal: &mut Terminal,
    channel: &mut Channel,
    issuer: &mut Issuer,
    purchase: &Purchase,
    clock: &mut SimClock,
) -> TransactionResult {
    let saved = terminal.config.issuer_nonce;
    terminal.config.issuer_nonce = true;
    let r = run_transaction(card, terminal, channel, issuer, purchase, clock);
    terminal.config.issuer_nonce = saved;
    r
}

/// ATC of a reply to GET DATA, for callers checking the commitment.
pub fn committed_atc_of(transcript: &Transcript) -> Option<Atc> {
    let p = transcript.find(Direction::CardToTerminal, "GET_DATA_ATC", 0)?;
    (p.len() == 2).then(|| Atc(u16::from_be_bytes([p[0], p[1]])))
}
