use thiserror::Error;

use super::skim::{PreplayEntry, PreplayTable, AUTH_TIME_LIMIT_US};
use crate::actors::{genuine_delay_us, CardCommand, CardEndpoint, CardError, CardReply, CardResponse};
use crate::emv::{Atc, Un};
use crate::unzoo::{CounterModel, SimClock, COUNTER_BITS, COUNTER_MODULUS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncConfig {
    pub rtc_resolution_us: u64,
    /// How long the card may stall a reply (request more time).
    pub max_stall_us: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            rtc_resolution_us: 1_000,
            max_stall_us: AUTH_TIME_LIMIT_US,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("no table window reachable within the stall budget")]
    NoWindow,
}

/// When the card wants the terminal's UN to be sampled.
#[derive(Clone, Debug, PartialEq)]
pub enum Timing {
    /// Answer at genuine speed; the UN is known regardless of timing.
    Immediate,
    /// Stall READ RECORDS so sampling falls in a table window of the counter.
    Counter { model: CounterModel },
    /// Stall READ RECORDS so sampling happens at this instant.
    At { sample_us: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackCardConfig {
    pub table: PreplayTable,
    pub sync: SyncConfig,
    pub timing: Timing,
    /// Time from the READ RECORDS reply to UN sampling, minus jitter.
    pub sample_offset_us: u64,
    /// Expected terminal jitter before sampling.
    pub jitter_mean_us: u64,
    /// Error of the on-board clock reading.
    pub rtc_error_us: i64,
    /// Aim for, and commit to, a single entry (the terminal asks for the ATC).
    pub expect_commitment: bool,
    /// Play this entry whatever UN arrives; a network accomplice fixes it up.
    pub ignore_un: Option<Un>,
}

impl AttackCardConfig {
    pub fn new(table: PreplayTable) -> Self {
        AttackCardConfig {
            table,
            sync: SyncConfig::default(),
            timing: Timing::Immediate,
            sample_offset_us: 0,
            jitter_mean_us: 0,
            rtc_error_us: 0,
            expect_commitment: false,
            ignore_un: None,
        }
    }
}

/// Picks how long to stall so the sampling instant lands in the middle of a
/// run of table windows. `arrival_us` is when sampling would happen with no
/// stall, on the card's own clock. Returns the stall and the counter value
/// expected at the aimed instant.
pub fn synchronize(
    sync: &SyncConfig,
    model: &CounterModel,
    counts: &[u32],
    arrival_us: u64,
) -> Result<(u64, u32), SyncError> {
    let mut windows: Vec<(u64, u64)> = counts
        .iter()
        .map(|&c| {
            let (start, len) = model.next_window(c, arrival_us);
            (start, start + len)
        })
        .collect();
    windows.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (s, e) in windows {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    for (s, e) in merged {
        let centre = s + (e - s) / 2;
        let aim = if centre >= arrival_us {
            centre
        } else if arrival_us < e {
            arrival_us
        } else {
            continue;
        };
        let wait = aim - arrival_us;
        if wait > sync.max_stall_us {
            break;
        }
        let count = model.un_at(aim).0 & (COUNTER_MODULUS as u32 - 1);
        return Ok((wait, count));
    }
    Err(SyncError::NoWindow)
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PreplayStats {
    pub feigned: u32,
    pub last_stall_us: Option<u64>,
    pub sync_failures: u32,
}

/// Card that replays harvested cryptograms.
#[derive(Clone, Debug)]
pub struct PreplayCard {
    pub cfg: AttackCardConfig,
    /// Entry the card intends to play next.
    intended: Option<Un>,
    committed: bool,
    playing: Option<Un>,
    pub stats: PreplayStats,
}

impl PreplayCard {
    pub fn new(cfg: AttackCardConfig) -> Self {
        let intended = cfg.ignore_un.or_else(|| cfg.table.by_atc().first().map(|e| e.un));
        PreplayCard {
            cfg,
            intended,
            committed: false,
            playing: None,
            stats: PreplayStats::default(),
        }
    }

    fn believed_now(&self, clock: &SimClock) -> u64 {
        (clock.now_us() as i64 + self.cfg.rtc_error_us).max(0) as u64
    }

    fn table_counts(&self, model: &CounterModel) -> Vec<u32> {
        self.cfg
            .table
            .entries
            .keys()
            .filter(|u| u.0 >> COUNTER_BITS == model.prefix17)
            .map(|u| u.0 & (COUNTER_MODULUS as u32 - 1))
            .collect()
    }

    fn un_for_count(&self, count: u32) -> Option<Un> {
        self.cfg
            .table
            .entries
            .keys()
            .copied()
            .find(|u| u.0 & (COUNTER_MODULUS as u32 - 1) == count)
    }

    /// Stall before answering READ RECORDS.
    fn stall_us(&mut self, clock: &SimClock) -> u64 {
        let arrival = self.believed_now(clock)
            + genuine_delay_us(&CardCommand::ReadRecords)
            + self.cfg.sample_offset_us
            + self.cfg.jitter_mean_us;
        let wait = match &self.cfg.timing {
            Timing::Immediate => Ok(0),
            Timing::At { sample_us } => match sample_us.checked_sub(arrival) {
                Some(w) if w <= self.cfg.sync.max_stall_us => Ok(w),
                _ => Err(SyncError::NoWindow),
            },
            Timing::Counter { model } => {
                let model = *model;
                let counts = self.table_counts(&model);
                synchronize(&self.cfg.sync, &model, &counts, arrival).and_then(|(w, c)| {
                    if !self.cfg.expect_commitment {
                        return Ok(w);
                    }
                    // Commit to the entry at the centre of the run and aim at it alone.
                    self.intended = self.un_for_count(c);
                    synchronize(&self.cfg.sync, &model, &[c], arrival).map(|(w, _)| w)
                })
            }
        };
        match wait {
            Ok(w) => {
                self.stats.last_stall_us = Some(w);
                w
            }
            Err(_) => {
                self.stats.sync_failures += 1;
                0
            }
        }
    }

    fn entry_for(&self, un: Un) -> Option<&PreplayEntry> {
        let key = self.cfg.ignore_un.unwrap_or(un);
        if self.committed && Some(key) != self.intended {
            return None;
        }
        self.cfg.table.get(key)
    }

    fn feign(&mut self) -> CardResponse {
        self.stats.feigned += 1;
        CardResponse::Error(CardError::Malfunction)
    }
}

impl CardEndpoint for PreplayCard {
    fn handle(&mut self, cmd: &CardCommand, clock: &SimClock) -> Option<CardReply> {
        let mut delay_us = genuine_delay_us(cmd);
        let response = match cmd {
            CardCommand::ReadRecords => {
                self.playing = None;
                self.committed = false;
                delay_us += self.stall_us(clock);
                CardResponse::Records(self.cfg.table.static_data.clone())
            }
            CardCommand::GetDataAtc => {
                self.committed = true;
                let atc = self
                    .intended
                    .and_then(|u| self.cfg.table.get(u))
                    .map_or(Atc(0), |e| Atc(e.arqc.atc.0 - 1));
                CardResponse::Atc(atc)
            }
            CardCommand::VerifyPin(pin) => CardResponse::PinOk(*pin == self.cfg.table.pin),
            CardCommand::InternalAuthenticate(un) => match self.entry_for(*un).and_then(|e| e.dda_signature.clone()) {
                Some(sig) => CardResponse::DdaSignature(sig),
                None => self.feign(),
            },
            CardCommand::GenerateAcArqc(ctx) => match self.entry_for(ctx.un) {
                Some(e) if e.ctx_template.economics_match(ctx) => {
                    let arqc = e.arqc.clone();
                    self.playing = Some(e.un);
                    CardResponse::Cryptogram(arqc)
                }
                _ => self.feign(),
            },
            // The card cannot check the ARPC without the key; it just says yes.
            CardCommand::ExternalAuthenticate { .. } => match self.playing {
                Some(_) => CardResponse::ExternalAuth { ok: true },
                None => CardResponse::Error(CardError::ConditionsNotSatisfied),
            },
            CardCommand::GenerateAcTc { .. } => match self.playing.take().and_then(|u| self.cfg.table.get(u)) {
                Some(e) => CardResponse::Cryptogram(e.tc.clone()),
                None => CardResponse::Error(CardError::ConditionsNotSatisfied),
            },
        };
        Some(CardReply { response, delay_us })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn model(phase: i64) -> CounterModel {
        CounterModel {
            prefix17: 0x1E248,
            tick_us: 3300,
            phase_lo: phase,
            phase_hi: phase + 1,
        }
    }

    fn count_at(phase: i64, t: u64) -> u32 {
        (((t as i64 + phase).rem_euclid(3300 * 32768)) / 3300) as u32
    }

    /// Fraction of trials where the sampled counter is one of `counts`,
    /// when the card reads its clock with uniform error of ±res/2.
    fn success_rate(counts: &[u32], res_us: u64, trials: u32) -> f64 {
        let sync = SyncConfig {
            rtc_resolution_us: res_us,
            max_stall_us: AUTH_TIME_LIMIT_US,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut hits = 0;
        for _ in 0..trials {
            let phase = rng.random_range(0..3300 * 32768i64);
            let m = model(phase);
            // Inserted up to a second ahead of the first target window.
            let (start, _) = m.next_window(counts[0], rng.random_range(1_000_000_000..2_000_000_000));
            let true_arrival = start - rng.random_range(0..1_000_000);
            let half = res_us as i64 / 2;
            let err = rng.random_range(-half..=half);
            let believed = (true_arrival as i64 + err) as u64;
            let wait = synchronize(&sync, &m, counts, believed).map_or(0, |(w, _)| w);
            if counts.contains(&count_at(phase, true_arrival + wait)) {
                hits += 1;
            }
        }
        f64::from(hits) / f64::from(trials)
    }

    #[test]
    fn ten_entries_at_1ms_resolution() {
        let counts: Vec<u32> = (100..110).collect();
        assert!(success_rate(&counts, 1_000, 10_000) >= 0.9);
    }

    #[test]
    fn single_entry_coarse_clock_scales_with_tick() {
        let rate = success_rate(&[500], 33_000, 10_000);
        // tick / resolution = 0.1
        assert!((rate - 0.1).abs() < 0.015, "{rate}");
    }

    #[test]
    fn no_window_when_budget_too_small() {
        let sync = SyncConfig {
            rtc_resolution_us: 1000,
            max_stall_us: 10,
        };
        let m = model(0);
        // Count 1000 is 3.3 s after count 0.
        assert_eq!(synchronize(&sync, &m, &[1000], 0), Err(SyncError::NoWindow));
    }
}
