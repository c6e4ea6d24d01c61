//! Byzantine peers: poisoned labels or weights resampled from a kernel
//! density estimate of their own honest weights.

mod kde;

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::model::{Architecture, LayerRange};
use crate::learning::Dataset;

pub use kde::{sample_noisy_weights, silverman_bandwidth, WeightKde};

/// Largest Byzantine share the experiments are designed around.
pub const STUDIED_MAX_FRACTION: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("class {class} outside {classes} classes")]
    UnknownClass { class: usize, classes: usize },
    #[error("byzantine fraction {0} must lie in [0, 1]")]
    InvalidFraction(f64),
    #[error("fraction {fraction} of {peers} peers selects nobody")]
    EmptyPopulation { fraction: f64, peers: usize },
    #[error("kernel width must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("kernel density needs at least one support point")]
    EmptySupport,
}

/// Which dense layers the noisy-weights attack rewrites.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSelector {
    /// The last two dense layers, or the only one for a single-layer model.
    #[default]
    LastTwo,
    All,
    Indices {
        layers: Vec<usize>,
    },
}

impl LayerSelector {
    pub fn resolve(&self, arch: &Architecture) -> Vec<LayerRange> {
        let all = arch.layer_ranges();
        match self {
            Self::LastTwo => {
                let skip = all.len().saturating_sub(2);
                all.into_iter().skip(skip).collect()
            }
            Self::All => all,
            Self::Indices { layers } => all
                .into_iter()
                .enumerate()
                .filter(|(i, _)| layers.contains(i))
                .map(|(_, l)| l)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    /// Swap two fixed classes.
    FlipFixed { class_a: usize, class_b: usize },
    /// Swap one uniformly chosen pair of classes.
    FlipRandom,
    /// Permute all labels of the shard.
    ShuffleAll,
    /// Replace selected layers with draws from a KDE of their own values.
    /// `sigma: None` picks Silverman's bandwidth per layer.
    NoisyWeights {
        sigma: Option<f64>,
        #[serde(default)]
        layers: LayerSelector,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::FlipFixed { .. } => "flip_fixed",
            Self::FlipRandom => "flip_random",
            Self::ShuffleAll => "shuffle_all",
            Self::NoisyWeights { .. } => "noisy_weights",
        }
    }

    pub fn is_label_attack(&self) -> bool {
        matches!(
            self,
            Self::FlipFixed { .. } | Self::FlipRandom | Self::ShuffleAll
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub byzantine_fraction: f64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        let f = self.byzantine_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(AdversaryError::InvalidFraction(f));
        }
        if f > STUDIED_MAX_FRACTION {
            log::warn!("byzantine fraction {f} is beyond the studied range of up to {STUDIED_MAX_FRACTION}");
        }
        if let AttackKind::NoisyWeights { sigma: Some(s), .. } = self.kind {
            if !(s.is_finite() && s > 0.0) {
                return Err(AdversaryError::InvalidSigma(s));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != AttackKind::None && self.byzantine_fraction > 0.0
    }
}

fn check_class(class: usize, classes: usize) -> Result<(), AdversaryError> {
    if class < classes {
        Ok(())
    } else {
        Err(AdversaryError::UnknownClass { class, classes })
    }
}

/// Every `a` label becomes `b` and vice versa.
pub fn flip_labels_fixed(data: &Dataset, a: usize, b: usize) -> Result<Dataset, AdversaryError> {
    check_class(a, data.num_classes())?;
    check_class(b, data.num_classes())?;
    let mut out = data.clone();
    for y in out.labels_mut() {
        if *y == a {
            *y = b;
        } else if *y == b {
            *y = a;
        }
    }
    Ok(out)
}

/// Swaps one unordered class pair drawn uniformly from the label space.
/// Shards showing fewer than two distinct labels are returned unchanged.
pub fn flip_labels_random<R: Rng + ?Sized>(
    data: &Dataset,
    rng: &mut R,
) -> (Dataset, Option<(usize, usize)>) {
    let present = data.class_histogram().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        if !data.is_empty() {
            log::warn!("random label flip skipped: shard holds a single class");
        }
        return (data.clone(), None);
    }
    let pair = index::sample(rng, data.num_classes(), 2).into_vec();
    let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
    let out = flip_labels_fixed(data, a, b).expect("classes drawn from the label space");
    (out, Some((a, b)))
}

/// Uniformly permutes labels across samples.
pub fn shuffle_labels<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Dataset {
    let mut out = data.clone();
    out.labels_mut().shuffle(rng);
    out
}

/// Poisons a shard once, before any training. Weight attacks leave data alone.
pub fn poison_shard<R: Rng + ?Sized>(
    kind: &AttackKind,
    data: &Dataset,
    rng: &mut R,
) -> Result<Dataset, AdversaryError> {
    match kind {
        AttackKind::FlipFixed { class_a, class_b } => flip_labels_fixed(data, *class_a, *class_b),
        AttackKind::FlipRandom => Ok(flip_labels_random(data, rng).0),
        AttackKind::ShuffleAll => Ok(shuffle_labels(data, rng)),
        AttackKind::None | AttackKind::NoisyWeights { .. } => Ok(data.clone()),
    }
}

/// Rewrites the selected layers of `weights` in place with KDE draws built
/// from those same layers.
pub fn apply_noisy_weights<R: Rng + ?Sized>(
    weights: &mut [f64],
    arch: &Architecture,
    layers: &LayerSelector,
    sigma: Option<f64>,
    rng: &mut R,
) -> Result<(), AdversaryError> {
    for l in layers.resolve(arch) {
        for range in [l.kernel, l.bias] {
            let support = weights[range.clone()].to_vec();
            if support.is_empty() {
                continue;
            }
            let s = match sigma {
                Some(s) => s,
                None => silverman_bandwidth(&support),
            };
            let kde = WeightKde::new(support, s)?;
            let fresh = sample_noisy_weights(&kde, range.len(), rng);
            weights[range].copy_from_slice(&fresh);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByzantinePopulation {
    pub members: BTreeSet<usize>,
    pub kind: AttackKind,
}

impl ByzantinePopulation {
    pub fn honest() -> Self {
        Self {
            members: BTreeSet::new(),
            kind: AttackKind::None,
        }
    }

    pub fn is_byzantine(&self, peer: usize) -> bool {
        self.members.contains(&peer)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Uniform Byzantine subset of size `round(fraction · num_peers)`.
/// Draws nothing from `rng` when the attack is inactive.
pub fn make_byzantine_population<R: Rng + ?Sized>(
    num_peers: usize,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<ByzantinePopulation, AdversaryError> {
    config.validate()?;
    if !config.is_active() {
        return Ok(ByzantinePopulation::honest());
    }
    let count = (config.byzantine_fraction * num_peers as f64).round() as usize;
    if count == 0 {
        return Err(AdversaryError::EmptyPopulation {
            fraction: config.byzantine_fraction,
            peers: num_peers,
        });
    }
    Ok(ByzantinePopulation {
        members: index::sample(rng, num_peers, count).into_iter().collect(),
        kind: config.kind.clone(),
    })
}
