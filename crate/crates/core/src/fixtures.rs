//! Committed test vectors, regenerated from the Rust implementation.
//!
//! The files under `fixtures/` were first written by an independent oracle
//! script; `gen-fixtures` must reproduce them byte for byte.

use serde::Serialize;

use crate::actors::{reference, run_transaction, Channel, Purchase};
use crate::countermeasures::PolicySet;
use crate::emv::{
    compute_arpc, compute_cryptogram, derive_session_key, serialize_context, Arc, Atc, CryptogramKind, Iad,
    TransactionContext, Tvr, Udk, Un,
};
use crate::unzoo::{lcg, Scripted, SimClock, UnGenerator};

pub const EMV_VECTORS: &str = "emv_vectors.jsonl";
pub const LCG_VECTORS: &str = "lcg_vectors.jsonl";
pub const REFERENCE_TRANSCRIPT: &str = "reference_transcript.log";

#[derive(Serialize)]
struct SessionKeyVector {
    op: &'static str,
    udk: String,
    atc: u16,
    session_key: String,
}

#[derive(Serialize)]
struct CtxFields {
    amount: u64,
    currency: u16,
    date: u32,
    country: u16,
    tvr: String,
    un: String,
}

impl CtxFields {
    fn of(ctx: &TransactionContext) -> Self {
        CtxFields {
            amount: ctx.amount,
            currency: ctx.currency,
            date: ctx.date,
            country: ctx.terminal_country,
            tvr: hex::encode(ctx.tvr.as_bytes()),
            un: format!("{:08x}", ctx.un.0),
        }
    }
}

#[derive(Serialize)]
struct SerializeVector {
    op: &'static str,
    #[serde(flatten)]
    ctx: CtxFields,
    atc: u16,
    iad: String,
    serialized: String,
}

#[derive(Serialize)]
struct CryptogramVector {
    op: &'static str,
    kind: &'static str,
    udk: String,
    #[serde(flatten)]
    ctx: CtxFields,
    atc: u16,
    iad: String,
    arc: Option<String>,
    mac: String,
}

#[derive(Serialize)]
struct ArpcVector {
    op: &'static str,
    udk: String,
    atc: u16,
    arqc_mac: String,
    arc: String,
    arpc: String,
}

#[derive(Serialize)]
struct LcgVector {
    op: &'static str,
    seed: u32,
    uns: Vec<String>,
}

fn line<T: Serialize>(out: &mut String, v: &T) {
    out.push_str(&serde_json::to_string(v).expect("plain structs serialize"));
    out.push('\n');
}

fn cases() -> Vec<(TransactionContext, Atc, Iad)> {
    let a = TransactionContext::new(3000, 978, 20110629, 724, Tvr::empty(), Un(0xF1246E04)).expect("valid");
    let tvr_b = Tvr::from_bytes([0x80, 0, 0, 0, 0]).expect("valid");
    let b = TransactionContext::new(20000, 826, 20120315, 826, tvr_b, Un(0x77028437)).expect("valid");
    vec![
        (a, Atc(1), Iad::new(vec![0x06]).expect("valid")),
        (b, Atc(0x0102), reference::base_iad()),
    ]
}

pub fn emv_vectors() -> String {
    let udk = reference::udk();
    let zero = Udk::new([0; 16]);
    let mut out = String::new();
    for (key, atc) in [(&zero, 0), (&zero, 1), (&udk, 42)] {
        line(
            &mut out,
            &SessionKeyVector {
                op: "derive_session_key",
                udk: hex::encode(key.as_bytes()),
                atc,
                session_key: hex::encode(derive_session_key(key, Atc(atc))),
            },
        );
    }
    let cases = cases();
    for (ctx, atc, iad) in &cases {
        line(
            &mut out,
            &SerializeVector {
                op: "serialize_context",
                ctx: CtxFields::of(ctx),
                atc: atc.0,
                iad: hex::encode(iad.as_bytes()),
                serialized: hex::encode(serialize_context(ctx, *atc, iad).expect("valid")),
            },
        );
    }
    let kinds = [
        (CryptogramKind::Arqc, None),
        (CryptogramKind::Tc, Some(Arc::Approve)),
        (CryptogramKind::Tc, Some(Arc::Decline)),
        (CryptogramKind::Aac, None),
    ];
    for (ctx, atc, iad) in &cases {
        for (kind, arc) in kinds {
            let c = compute_cryptogram(kind, &udk, ctx, *atc, iad, arc).expect("valid");
            line(
                &mut out,
                &CryptogramVector {
                    op: "compute_cryptogram",
                    kind: kind.name(),
                    udk: hex::encode(udk.as_bytes()),
                    ctx: CtxFields::of(ctx),
                    atc: atc.0,
                    iad: hex::encode(iad.as_bytes()),
                    arc: arc.map(|a| hex::encode(a.code())),
                    mac: hex::encode(c.mac),
                },
            );
        }
    }
    let (ctx, atc, iad) = &cases[0];
    let arqc = compute_cryptogram(CryptogramKind::Arqc, &udk, ctx, *atc, iad, None).expect("valid");
    for arc in [Arc::Approve, Arc::Decline] {
        line(
            &mut out,
            &ArpcVector {
                op: "compute_arpc",
                udk: hex::encode(udk.as_bytes()),
                atc: atc.0,
                arqc_mac: hex::encode(arqc.mac),
                arc: hex::encode(arc.code()),
                arpc: hex::encode(compute_arpc(&udk, *atc, &arqc.mac, arc).0),
            },
        );
    }
    out
}

pub fn lcg_vectors() -> String {
    let mut out = String::new();
    for seed in [0u32, 1, 12345, 0x7FFF_FFFF] {
        line(
            &mut out,
            &LcgVector {
                op: "trunc_lcg",
                seed,
                uns: lcg::sequence(seed, 4).iter().map(|u| format!("{:08x}", u.0)).collect(),
            },
        );
    }
    out
}

/// One approved ATM withdrawal on the reference card, UN 0xF1246E04.
pub fn reference_transcript() -> String {
    let mut card = reference::card(6);
    let mut terminal = reference::terminal(UnGenerator::Scripted(Scripted::new(vec![Un(0xF1246E04)])), 1);
    let mut issuer = reference::issuer(PolicySet::default(), 1);
    let mut clock = SimClock::at_ms((10 * 3600 + 37 * 60 + 20) * 1000);
    let purchase = Purchase {
        amount: reference::AMOUNT,
        pin: reference::PIN.into(),
    };
    let r = run_transaction(&mut card, &mut terminal, &mut Channel::new(), &mut issuer, &purchase, &mut clock);
    r.transcript.to_string()
}

/// Every committed fixture as (file name, contents).
pub fn all() -> Vec<(&'static str, String)> {
    vec![
        (EMV_VECTORS, emv_vectors()),
        (LCG_VECTORS, lcg_vectors()),
        (REFERENCE_TRANSCRIPT, reference_transcript()),
    ]
}
