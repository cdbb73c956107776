use std::cell::Cell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::actors::{AuthRequest, Channel, Interceptor};
use crate::emv::Un;

/// What makes the interceptor fire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MitmTrigger {
    Pan(String),
    Arqc([u8; 8]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    #[default]
    Pan,
    Arqc,
}

/// Rewrites the UN in matching authorization requests.
pub struct UnRewriter {
    pub trigger: MitmTrigger,
    pub replacement: Un,
    fired: Rc<Cell<u32>>,
}

impl Interceptor for UnRewriter {
    fn on_auth_request(&mut self, req: &mut AuthRequest) {
        let hit = match &self.trigger {
            MitmTrigger::Pan(pan) => req.pan == *pan,
            MitmTrigger::Arqc(mac) => req.cryptogram.mac == *mac,
        };
        if hit {
            req.ctx.un = self.replacement;
            self.fired.set(self.fired.get() + 1);
        }
    }
}

/// Installs a UN rewriter on the channel; the returned counter reports how
/// many requests it changed.
pub fn mitm_rewrite_un(channel: &mut Channel, trigger: MitmTrigger, replacement: Un) -> Rc<Cell<u32>> {
    let fired = Rc::new(Cell::new(0));
    channel.attach(Box::new(UnRewriter {
        trigger,
        replacement,
        fired: Rc::clone(&fired),
    }));
    fired
}
