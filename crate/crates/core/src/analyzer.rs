//! Classification of timestamped UN logs into generator classes.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::emv::Un;
use crate::unzoo::{char_c_predicate, lcg};

/// Below this many samples stuck-bit evidence is reported but not acted on.
pub const MIN_CONFIDENT_SAMPLES: usize = 10;
pub const SIGNIFICANCE: f64 = 1e-3;
/// Largest relative RMS error between counter deltas and the fitted rate.
pub const COUNTER_TOLERANCE: f64 = 0.25;
pub const LCG_FAMILY: &str = "ansi_c_trunc8";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnObservation {
    pub timestamp_ms: u64,
    pub un: Un,
    pub source_id: String,
    /// Power-cycle marker; a change between rows means a reboot happened.
    pub boot_id: Option<String>,
}

impl UnObservation {
    pub fn new(timestamp_ms: u64, un: Un) -> Self {
        UnObservation {
            timestamp_ms,
            un,
            source_id: String::new(),
            boot_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzeError {
    #[error("no observations")]
    Empty,
}

fn hex32<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("0x{v:08X}"))
}

fn hex_prefix<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("0x{v:X}"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StuckBits {
    #[serde(serialize_with = "hex32")]
    pub zero_mask: u32,
    #[serde(serialize_with = "hex32")]
    pub one_mask: u32,
    /// Probability of this many stuck bits under a uniform source, taking
    /// bits as independent: 2^-(n·m) for m stuck bits over n samples.
    pub p_value: f64,
    pub low_confidence: bool,
}

impl StuckBits {
    pub fn count(&self) -> u32 {
        (self.zero_mask | self.one_mask).count_ones()
    }
}

pub fn detect_stuck_bits(seq: &[UnObservation]) -> Result<StuckBits, AnalyzeError> {
    if seq.is_empty() {
        return Err(AnalyzeError::Empty);
    }
    let any_one = seq.iter().fold(0u32, |acc, o| acc | o.un.0);
    let all_one = seq.iter().fold(u32::MAX, |acc, o| acc & o.un.0);
    let zero_mask = !any_one;
    let one_mask = all_one;
    let m = (zero_mask | one_mask).count_ones() as f64;
    Ok(StuckBits {
        zero_mask,
        one_mask,
        p_value: 2f64.powf(-(seq.len() as f64) * m),
        low_confidence: seq.len() < MIN_CONFIDENT_SAMPLES,
    })
}

/// True iff every sample has bit 31 and bits 23..20 clear; p = (2^-5)^n.
pub fn detect_characteristic_c(seq: &[UnObservation]) -> (bool, f64) {
    let all = !seq.is_empty() && seq.iter().all(|o| char_c_predicate(o.un));
    let p = if all { 2f64.powf(-5.0 * seq.len() as f64) } else { 1.0 };
    (all, p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterFit {
    pub prefix_bits: u32,
    #[serde(serialize_with = "hex_prefix")]
    pub prefix_value: u32,
    pub modulus: u64,
    pub ticks_per_second: f64,
    pub residual: f64,
}

fn sorted_by_time(seq: &[UnObservation]) -> Vec<&UnObservation> {
    let mut v: Vec<&UnObservation> = seq.iter().collect();
    v.sort_by_key(|o| o.timestamp_ms);
    v
}

fn common_prefix_len(seq: &[&UnObservation]) -> u32 {
    let first = seq[0].un.0;
    let diff = seq.iter().fold(0u32, |acc, o| acc | (o.un.0 ^ first));
    diff.leading_zeros()
}

/// Least-squares fit of `d ≈ r·Δt`, with the relative RMS of the misfit.
fn rate_fit(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let sxx: f64 = pairs.iter().map(|(dt, _)| dt * dt).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pairs.iter().map(|(dt, d)| dt * d).sum();
    let rate = sxy / sxx;
    if rate <= 0.0 {
        return None;
    }
    let err: f64 = pairs.iter().map(|(dt, d)| (d - rate * dt).powi(2)).sum();
    let scale: f64 = pairs.iter().map(|(dt, _)| (rate * dt).powi(2)).sum();
    Some((rate, (err / scale).sqrt()))
}

/// Searches split points k in 8..=24: top 32−k bits constant and low-k deltas
/// proportional to elapsed time modulo 2^k. Returns the narrowest counter that
/// fits, since any wider one fits the same data only when it never wrapped.
pub fn fit_counter(seq: &[UnObservation]) -> Option<CounterFit> {
    if seq.len() < 3 {
        return None;
    }
    let obs = sorted_by_time(seq);
    let lcp = common_prefix_len(&obs);
    let k_min = 32u32.saturating_sub(lcp).max(8);
    for k in k_min..=24 {
        let modulus = 1u64 << k;
        let mask = (modulus - 1) as u32;
        let pairs: Vec<(f64, f64)> = obs
            .windows(2)
            .map(|w| {
                let dt = (w[1].timestamp_ms - w[0].timestamp_ms) as f64 / 1000.0;
                let d = (w[1].un.0 & mask).wrapping_sub(w[0].un.0 & mask) & mask;
                (dt, f64::from(d))
            })
            .collect();
        if let Some((rate, residual)) = rate_fit(&pairs) {
            if residual <= COUNTER_TOLERANCE {
                return Some(CounterFit {
                    prefix_bits: 32 - k,
                    prefix_value: obs[0].un.0 >> k,
                    modulus,
                    ticks_per_second: rate,
                    residual,
                });
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LcgFit {
    pub family: &'static str,
    pub seed: u32,
}

/// Catalogue search over the truncated-LCG family. Needs two or more UNs,
/// taken in timestamp order as consecutive draws.
pub fn fit_lcg(seq: &[UnObservation]) -> Option<LcgFit> {
    if seq.len() < 2 {
        return None;
    }
    let uns: Vec<Un> = sorted_by_time(seq).iter().map(|o| o.un).collect();
    lcg::recover_seeds(&uns).first().map(|&seed| LcgFit {
        family: LCG_FAMILY,
        seed,
    })
}

/// Whether two boots of the same source begin with the same values.
pub fn repeats_after_reboot(seq: &[UnObservation]) -> bool {
    let mut boots: BTreeMap<(&str, &str), Vec<Un>> = BTreeMap::new();
    let mut order: Vec<(&str, &str)> = Vec::new();
    for o in sorted_by_time(seq) {
        let Some(boot) = o.boot_id.as_deref() else { continue };
        let key = (o.source_id.as_str(), boot);
        let entry = boots.entry(key).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(o.un);
    }
    for (i, a) in order.iter().enumerate() {
        for b in &order[i + 1..] {
            if a.0 != b.0 {
                continue;
            }
            let (x, y) = (&boots[a], &boots[b]);
            let n = x.len().min(y.len()).min(4);
            if x[..n] == y[..n] {
                return true;
            }
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Counter,
    WeakRng,
    PredictableState,
    StrongUnknown,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Counter => "COUNTER",
            Classification::WeakRng => "WEAK_RNG",
            Classification::PredictableState => "PREDICTABLE_STATE",
            Classification::StrongUnknown => "STRONG_UNKNOWN",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharC {
    pub present: bool,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub sample_count: usize,
    /// Timestamps carry no sub-second information.
    pub coarse_timestamps: bool,
    pub stuck_bits: StuckBits,
    pub char_c: CharC,
    pub counter_fit: Option<CounterFit>,
    pub lcg_fit: Option<LcgFit>,
    pub classification: Classification,
}

pub fn classify(seq: &[UnObservation]) -> Result<AnalysisReport, AnalyzeError> {
    let stuck_bits = detect_stuck_bits(seq)?;
    let (present, p_value) = detect_characteristic_c(seq);
    let counter_fit = fit_counter(seq);
    let lcg_fit = fit_lcg(seq);
    let stuck_significant = !stuck_bits.low_confidence && stuck_bits.count() > 0 && stuck_bits.p_value < SIGNIFICANCE;
    let classification = if counter_fit.is_some() {
        Classification::Counter
    } else if lcg_fit.is_some() || stuck_significant {
        Classification::WeakRng
    } else if repeats_after_reboot(seq) {
        Classification::PredictableState
    } else {
        Classification::StrongUnknown
    };
    Ok(AnalysisReport {
        sample_count: seq.len(),
        coarse_timestamps: seq.iter().all(|o| o.timestamp_ms % 1000 == 0),
        stuck_bits,
        char_c: CharC { present, p_value },
        counter_fit,
        lcg_fit,
        classification,
    })
}
