use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChurnConfig {
    /// Expected departures per peer per simulated second.
    pub departure_rate_hz: f64,
    /// Mean length of an absence.
    pub mean_downtime_ms: f64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        Self {
            departure_rate_hz: 0.0,
            mean_downtime_ms: 5_000.0,
        }
    }
}

impl ChurnConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.departure_rate_hz.is_finite() && self.departure_rate_hz >= 0.0) {
            return Err(SimError::InvalidConfig(
                "departure rate must be >= 0".into(),
            ));
        }
        if !(self.mean_downtime_ms.is_finite() && self.mean_downtime_ms > 0.0) {
            return Err(SimError::InvalidConfig("mean downtime must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-peer unavailability intervals `[start, end)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChurnSchedule {
    absences: Vec<Vec<(u64, u64)>>,
    change_points: Vec<u64>,
}

impl ChurnSchedule {
    /// Everyone always present.
    pub fn none(num_peers: usize) -> Self {
        Self {
            absences: vec![Vec::new(); num_peers],
            change_points: Vec::new(),
        }
    }

    /// Scripted departure of `peer` during `[from, until)`.
    pub fn add_absence(&mut self, peer: usize, from: u64, until: u64) {
        if until <= from {
            return;
        }
        let list = &mut self.absences[peer];
        list.push((from, until));
        list.sort_unstable();
        // Merge overlaps so lookups can stop at the first candidate.
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(list.len());
        for &(s, e) in list.iter() {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        *list = merged;
        for t in [from, until] {
            if let Err(pos) = self.change_points.binary_search(&t) {
                self.change_points.insert(pos, t);
            }
        }
    }

    pub fn num_peers(&self) -> usize {
        self.absences.len()
    }

    pub fn absences(&self, peer: usize) -> &[(u64, u64)] {
        &self.absences[peer]
    }

    pub fn total_absences(&self) -> usize {
        self.absences.iter().map(Vec::len).sum()
    }

    pub fn is_available(&self, peer: usize, t: u64) -> bool {
        let list = &self.absences[peer];
        let idx = list.partition_point(|&(s, _)| s <= t);
        idx == 0 || list[idx - 1].1 <= t
    }

    /// Number of availability changes at or before `t`. Two instants with
    /// the same epoch see the same set of present peers.
    pub fn epoch(&self, t: u64) -> usize {
        self.change_points.partition_point(|&c| c <= t)
    }
}

/// Poisson departures with exponential downtimes over `[0, horizon_ms)`.
pub fn inject_churn<R: Rng + ?Sized>(
    num_peers: usize,
    config: &ChurnConfig,
    horizon_ms: u64,
    rng: &mut R,
) -> Result<ChurnSchedule, SimError> {
    config.validate()?;
    let mut schedule = ChurnSchedule::none(num_peers);
    if config.departure_rate_hz == 0.0 {
        return Ok(schedule);
    }
    let gap = Exp::new(config.departure_rate_hz / 1_000.0).expect("positive rate");
    let downtime = Exp::new(1.0 / config.mean_downtime_ms).expect("positive mean");
    for peer in 0..num_peers {
        let mut t = gap.sample(rng);
        while t < horizon_ms as f64 {
            let d = downtime.sample(rng).max(1.0);
            let from = t as u64;
            let until = (t + d) as u64;
            schedule.add_absence(peer, from, until.max(from + 1));
            t += d + gap.sample(rng);
        }
    }
    Ok(schedule)
}
