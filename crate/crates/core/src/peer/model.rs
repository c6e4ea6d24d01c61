use rand::RngCore;

/// What the protocol needs from a peer's learner.
pub trait LocalModel {
    /// Weights to contribute to a synergy. Honest peers return their own
    /// weights; a Byzantine peer may return something else.
    fn contribution(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn weights(&self) -> Vec<f64>;

    fn replace_weights(&mut self, weights: &[f64]);

    /// Metric used by the acceptance rule, higher is better. `None` when it
    /// is undefined on the local data, in which case aggregates are kept.
    fn local_metric(&self) -> Option<f64>;
}

/// A static weight vector, for protocol-only simulations. With a target
/// the metric is the negative squared distance to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedWeights {
    weights: Vec<f64>,
    target: Option<Vec<f64>>,
}

impl FixedWeights {
    pub fn new(weights: Vec<f64>) -> Self {
        Self {
            weights,
            target: None,
        }
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Self {
        self.target = Some(target);
        self
    }
}

impl LocalModel for FixedWeights {
    fn contribution(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.weights.clone()
    }

    fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn replace_weights(&mut self, weights: &[f64]) {
        self.weights = weights.to_vec();
    }

    fn local_metric(&self) -> Option<f64> {
        let target = self.target.as_ref()?;
        Some(
            -self
                .weights
                .iter()
                .zip(target)
                .map(|(w, t)| (w - t) * (w - t))
                .sum::<f64>(),
        )
    }
}
