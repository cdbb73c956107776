//! Card, terminal and issuer state machines and the transaction flow.

mod card;
mod channel;
mod flow;
mod issuer;
pub mod reference;
mod terminal;
mod transcript;

pub use card::{
    genuine_delay_us, Card, CardCommand, CardEndpoint, CardError, CardProfile, CardReply, CardResponse, SW_OK,
    SW_VERIFY_FAILED,
};
pub use channel::{Channel, Interceptor, NETWORK_RTT_US};
pub use flow::{
    committed_atc_of, run_transaction, run_transaction_issuer_nonce, sample_offset_us, FailReason, Outcome, Purchase,
    TransactionResult, PIN_ENTRY_US, TERMINAL_STEP_US,
};
pub use issuer::{
    pin_token, Account, AuthRequest, AuthResponse, DeclineReason, Issuer, IssuerLogRecord, SettlementRecord,
};
pub use terminal::{Terminal, TerminalConfig, TerminalMode};
pub use transcript::{Direction, Transcript, TranscriptEntry};

#[cfg(test)]
pub(crate) mod test_support {
    use super::reference;
    use crate::emv::{TransactionContext, Un};

    pub fn profile() -> super::CardProfile {
        reference::card(0).profile
    }

    pub fn ctx() -> TransactionContext {
        reference::ctx(Un(0xF1246E04))
    }
}
