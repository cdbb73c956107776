//! UN log CSV: `date,time,un` plus optional `source_id` and `boot_id`.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveTime};
use preplay_core::analyzer::UnObservation;
use preplay_core::emv::Un;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogError {
    /// 1-based line in the file; 0 for whole-file problems.
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for LogError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "row {}: {}", self.line, self.message)
        }
    }
}

fn err(line: u64, message: impl Into<String>) -> LogError {
    LogError {
        line,
        message: message.into(),
    }
}

pub fn timestamp_ms(date: &str, time: &str) -> Result<u64, String> {
    let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d").map_err(|e| format!("date {date:?}: {e}"))?;
    let t = NaiveTime::parse_from_str(time.trim(), "%H:%M:%S%.f").map_err(|e| format!("time {time:?}: {e}"))?;
    let ms = d.and_time(t).and_utc().timestamp_millis();
    u64::try_from(ms).map_err(|_| format!("date {date:?} is before 1970"))
}

/// Parses the whole log; any bad row fails the lot.
pub fn parse(text: &str) -> Result<Vec<UnObservation>, LogError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().all(str::is_empty) {
        return Err(err(0, "empty file: expected a header with date,time,un"));
    }
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(date), Some(time), Some(un)) = (col("date"), col("time"), col("un")) else {
        return Err(err(1, "header must contain date, time and un columns"));
    };
    let (source, boot) = (col("source_id"), col("boot_id"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ts = timestamp_ms(field(date), field(time)).map_err(|m| err(line, m))?;
        let un = Un::from_hex(field(un)).map_err(|e| err(line, e.to_string()))?;
        out.push(UnObservation {
            timestamp_ms: ts,
            un,
            source_id: source.map(|i| field(i).to_string()).unwrap_or_default(),
            boot_id: boot.map(|i| field(i).to_string()).filter(|b| !b.is_empty()),
        });
    }
    if out.is_empty() {
        return Err(err(0, "no observations after the header"));
    }
    Ok(out)
}

/// Observations split by `source_id`, in first-seen order of the key.
pub fn by_source(obs: Vec<UnObservation>) -> BTreeMap<String, Vec<UnObservation>> {
    let mut m: BTreeMap<String, Vec<UnObservation>> = BTreeMap::new();
    for o in obs {
        m.entry(o.source_id.clone()).or_default().push(o);
    }
    m
}
