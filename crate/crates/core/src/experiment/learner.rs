use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adversary::{apply_noisy_weights, LayerSelector};
use crate::learning::{
    evaluate, local_train, Dataset, LearningError, MetricKind, ModelParams, TrainConfig,
};
use crate::peer::LocalModel;

/// Weight-level misbehaviour installed on a Byzantine peer.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyWeights {
    pub layers: LayerSelector,
    pub sigma: Option<f64>,
}

/// A peer's model together with its private data.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: ModelParams,
    /// Data used for local training.
    pub shard: Dataset,
    /// Data used to score incoming aggregates.
    pub validation: Dataset,
    pub metric: MetricKind,
    pub noisy: Option<NoisyWeights>,
    rng: ChaCha20Rng,
}

impl Learner {
    pub fn new(
        model: ModelParams,
        shard: Dataset,
        validation: Dataset,
        metric: MetricKind,
        seed: u64,
    ) -> Self {
        Self {
            model,
            shard,
            validation,
            metric,
            noisy: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn train(&mut self, cfg: &TrainConfig) -> Result<(), LearningError> {
        local_train(&mut self.model, &self.shard, cfg, &mut self.rng).map(|_| ())
    }
}

impl LocalModel for Learner {
    /// Honest peers send their weights. A noisy peer first overwrites its
    /// selected layers with KDE draws and sends the result, keeping it.
    fn contribution(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        if let Some(n) = &self.noisy {
            if let Err(e) = apply_noisy_weights(
                &mut self.model.weights,
                &self.model.arch,
                &n.layers,
                n.sigma,
                &mut self.rng,
            ) {
                log::warn!("noisy weights not applied: {e}");
            }
        }
        self.model.weights.clone()
    }

    fn weights(&self) -> Vec<f64> {
        self.model.weights.clone()
    }

    fn replace_weights(&mut self, weights: &[f64]) {
        self.model.weights.copy_from_slice(weights);
    }

    fn local_metric(&self) -> Option<f64> {
        if self.validation.is_empty() {
            return None;
        }
        evaluate(&self.model, &self.validation)
            .ok()?
            .metric(self.metric)
    }
}
