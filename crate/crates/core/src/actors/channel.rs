use super::issuer::{AuthRequest, AuthResponse, Issuer, SettlementRecord};
use crate::emv::Un;
use crate::unzoo::SimClock;

/// Network round trip between terminal and issuer.
pub const NETWORK_RTT_US: u64 = 900_000;

/// Code sitting on the terminal-to-issuer path.
pub trait Interceptor {
    fn on_auth_request(&mut self, req: &mut AuthRequest);
}

/// Acquirer and switch collapsed into one message path.
pub struct Channel {
    interceptor: Option<Box<dyn Interceptor>>,
    pub reachable: bool,
    /// Online messages carried, both directions.
    pub messages: u64,
}

impl Default for Channel {
    fn default() -> Self {
        Channel::new()
    }
}

impl Channel {
    pub fn new() -> Self {
        Channel {
            interceptor: None,
            reachable: true,
            messages: 0,
        }
    }

    pub fn unreachable() -> Self {
        Channel {
            reachable: false,
            ..Channel::new()
        }
    }

    pub fn with_interceptor(interceptor: Box<dyn Interceptor>) -> Self {
        Channel {
            interceptor: Some(interceptor),
            ..Channel::new()
        }
    }

    pub fn attach(&mut self, interceptor: Box<dyn Interceptor>) {
        self.interceptor = Some(interceptor);
    }

    pub fn authorize(&mut self, issuer: &mut Issuer, req: &AuthRequest, clock: &mut SimClock) -> Option<AuthResponse> {
        if !self.reachable {
            return None;
        }
        let mut forwarded = req.clone();
        if let Some(i) = self.interceptor.as_mut() {
            i.on_auth_request(&mut forwarded);
        }
        clock.advance_us(NETWORK_RTT_US / 2);
        let resp = issuer.authorize(&forwarded, clock);
        clock.advance_us(NETWORK_RTT_US / 2);
        self.messages += 2;
        Some(resp)
    }

    pub fn fetch_nonce(&mut self, issuer: &mut Issuer, pan: &str, clock: &mut SimClock) -> Option<Un> {
        if !self.reachable {
            return None;
        }
        clock.advance_us(NETWORK_RTT_US / 2);
        let un = issuer.issue_nonce(pan, clock);
        clock.advance_us(NETWORK_RTT_US / 2);
        self.messages += 2;
        Some(un)
    }

    /// Clearing is batched offline; it does not touch the clock.
    pub fn settle(&mut self, issuer: &mut Issuer, record: SettlementRecord) {
        issuer.settle(record);
    }
}
