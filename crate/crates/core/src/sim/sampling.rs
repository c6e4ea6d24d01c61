use rand::seq::index::sample_weighted;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Inverse CDF of `f(x) = a·x^(a−1)` on `[0, 1]`.
pub fn power_law_quantile(u: f64, a: f64) -> f64 {
    u.powf(1.0 / a)
}

/// Draws from `f(x) = a·x^(a−1)`; `a = 1` is uniform, larger `a` leans
/// towards 1.
pub fn power_law_sample<R: Rng + ?Sized>(rng: &mut R, a: f64) -> Result<f64, SimError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(SimError::InvalidExponent(a));
    }
    Ok(power_law_quantile(rng.gen::<f64>(), a))
}

/// How many peers (initiator included) a new synergy asks for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynergySizeLaw {
    Fixed {
        size: usize,
    },
    Uniform {
        min: usize,
        max: usize,
    },
    /// `min + floor(x · (max − min + 1))` with `x` power-law distributed.
    PowerLaw {
        min: usize,
        max: usize,
        a: f64,
    },
}

impl Default for SynergySizeLaw {
    fn default() -> Self {
        Self::PowerLaw {
            min: 3,
            max: 10,
            a: 2.0,
        }
    }
}

impl SynergySizeLaw {
    pub fn validate(&self, min_size: usize) -> Result<(), SimError> {
        let (lo, hi) = self.bounds();
        if lo < min_size || hi < lo {
            return Err(SimError::InvalidConfig(format!(
                "synergy sizes must satisfy {min_size} <= min <= max, got [{lo}, {hi}]"
            )));
        }
        if let Self::PowerLaw { a, .. } = self {
            if !(a.is_finite() && *a > 0.0) {
                return Err(SimError::InvalidExponent(*a));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> (usize, usize) {
        match *self {
            Self::Fixed { size } => (size, size),
            Self::Uniform { min, max } | Self::PowerLaw { min, max, .. } => (min, max),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            Self::Fixed { size } => size,
            Self::Uniform { min, max } => rng.gen_range(min..=max),
            Self::PowerLaw { min, max, a } => {
                let x = power_law_quantile(rng.gen::<f64>(), a);
                (min + (x * (max - min + 1) as f64) as usize).min(max)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeerSampling {
    Uniform,
    /// Each peer gets a fixed selection weight drawn once from the power law.
    PowerLaw {
        a: f64,
    },
}

impl Default for PeerSampling {
    fn default() -> Self {
        Self::Uniform
    }
}

/// Per-experiment selection weights over peers.
#[derive(Debug, Clone)]
pub struct ParticipantSampler {
    weights: Vec<f64>,
}

impl ParticipantSampler {
    pub fn new<R: Rng + ?Sized>(
        mode: PeerSampling,
        num_peers: usize,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        let weights = match mode {
            PeerSampling::Uniform => vec![1.0; num_peers],
            PeerSampling::PowerLaw { a } => (0..num_peers)
                .map(|_| power_law_sample(rng, a))
                .collect::<Result<_, _>>()?,
        };
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Up to `k` distinct eligible peers, drawn without replacement with
    /// probability proportional to weight. Returned in ascending order.
    pub fn select<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
        eligible: impl Fn(usize) -> bool,
    ) -> Vec<usize> {
        let w: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, &w)| if eligible(i) { w } else { 0.0 })
            .collect();
        let available = w.iter().filter(|&&x| x > 0.0).count();
        let amount = k.min(available);
        if amount == 0 {
            return Vec::new();
        }
        let mut picked = sample_weighted(rng, w.len(), |i| w[i], amount)
            .expect("weights are finite and enough are positive")
            .into_vec();
        picked.sort_unstable();
        picked
    }
}
