use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::ModelParams;
use super::train::{evaluate, local_train, Evaluation, TrainConfig};
use super::LearningError;
use crate::seed::derive_seed;
use crate::sim::sampling::{ParticipantSampler, PeerSampling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopping {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Share of the pooled data held out to monitor validation loss.
    pub validation_fraction: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 10,
            min_delta: 0.001,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CentralizedResult {
    pub model: ModelParams,
    pub epochs_run: usize,
    pub test: Evaluation,
}

/// One model trained on all peers' data pooled together, stopped once the
/// validation loss has not improved by `min_delta` for `patience` epochs.
/// The best weights seen are returned.
pub fn centralized_baseline(
    init: &ModelParams,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    stop: &EarlyStopping,
    seed: u64,
) -> Result<CentralizedResult, LearningError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (val, fit) = train.split(stop.validation_fraction, &mut rng);
    let monitor = if val.is_empty() { &fit } else { &val };
    let one_epoch = TrainConfig { epochs: 1, ..*cfg };
    let mut model = init.clone();
    let mut best = model.clone();
    let mut best_loss = evaluate(&model, monitor)?.loss;
    let mut stale = 0;
    let mut epochs_run = 0;
    while epochs_run < stop.max_epochs {
        local_train(&mut model, &fit, &one_epoch, &mut rng)?;
        epochs_run += 1;
        let loss = evaluate(&model, monitor)?.loss;
        if loss < best_loss - stop.min_delta {
            best_loss = loss;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= stop.patience {
                break;
            }
        }
    }
    Ok(CentralizedResult {
        test: evaluate(&best, test)?,
        model: best,
        epochs_run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub rounds: usize,
    pub participants_per_round: usize,
    pub sampling: PeerSampling,
    /// Local epochs each participant runs per round.
    pub local_epochs: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            participants_per_round: 100,
            sampling: PeerSampling::PowerLaw { a: 2.0 },
            local_epochs: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlResult {
    pub model: ModelParams,
    /// Test metrics of the global model after each round.
    pub rounds: Vec<Evaluation>,
}

/// Training stream of `peer` in FL round `round`.
pub fn fl_train_seed(seed: u64, round: usize, peer: usize) -> u64 {
    derive_seed(seed, &[0xF1, round as u64, peer as u64])
}

/// Elementwise arithmetic mean.
pub fn average_weights<'a>(models: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for w in models {
        if sum.is_empty() {
            sum = vec![0.0; w.len()];
        }
        for (s, v) in sum.iter_mut().zip(w) {
            *s += v;
        }
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n.max(1) as f64);
    sum
}

/// Federated averaging with a central server: each round a sample of peers
/// trains `local_epochs` from the current global model and the server takes the uniform
/// mean of their weights.
pub fn fl_baseline(
    init: &ModelParams,
    shards: &[Dataset],
    test: &Dataset,
    cfg: &TrainConfig,
    fl: &FlConfig,
    seed: u64,
) -> Result<FlResult, LearningError> {
    if fl.participants_per_round == 0 || fl.participants_per_round > shards.len() {
        return Err(LearningError::Partition(format!(
            "{} participants per round over {} peers",
            fl.participants_per_round,
            shards.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[0xF0]));
    let sampler = ParticipantSampler::new(fl.sampling, shards.len(), &mut rng)
        .map_err(|e| LearningError::Partition(e.to_string()))?;
    let local = TrainConfig {
        epochs: fl.local_epochs,
        ..*cfg
    };
    let mut global = init.clone();
    let mut rounds = Vec::with_capacity(fl.rounds);
    for r in 0..fl.rounds {
        let chosen = sampler.select(fl.participants_per_round, &mut rng, |_| true);
        let mut locals = Vec::with_capacity(chosen.len());
        for &p in &chosen {
            let mut m = global.clone();
            let mut prng = ChaCha20Rng::seed_from_u64(fl_train_seed(seed, r, p));
            local_train(&mut m, &shards[p], &local, &mut prng)?;
            locals.push(m.weights);
        }
        global.weights = average_weights(locals.iter().map(Vec::as_slice));
        rounds.push(evaluate(&global, test)?);
    }
    Ok(FlResult {
        model: global,
        rounds,
    })
}

/// Training stream of `peer` in the train-alone baseline.
pub fn alone_train_seed(seed: u64, peer: usize) -> u64 {
    derive_seed(seed, &[0xA1, peer as u64])
}

/// Each peer trains only on its own shard. Returns per-peer test metrics.
pub fn train_alone(
    init: &ModelParams,
    shards: &[Dataset],
    test: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Evaluation>, LearningError> {
    shards
        .iter()
        .enumerate()
        .map(|(p, shard)| {
            let mut m = init.clone();
            let mut rng = ChaCha20Rng::seed_from_u64(alone_train_seed(seed, p));
            local_train(&mut m, shard, cfg, &mut rng)?;
            evaluate(&m, test)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::model::Architecture;
    use crate::learning::partition::{partition_data, Partition};
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut d = Dataset::new(3, 2);
        while d.len() < n {
            let x: [f64; 3] = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let m = x[0] - x[1] + 0.5 * x[2];
            if m.abs() > 0.2 {
                d.push(&x, (m > 0.0) as usize);
            }
        }
        d
    }

    fn init(seed: u64) -> ModelParams {
        ModelParams::init(
            Architecture::logistic(3),
            "sep",
            &mut ChaCha20Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn centralized_reaches_high_accuracy_and_stops_early() {
        let (train, test) = (separable(1_000, 1), separable(500, 2));
        let cfg = TrainConfig {
            l1: 0.0,
            ..TrainConfig::default()
        };
        let r = centralized_baseline(&init(0), &train, &test, &cfg, &EarlyStopping::default(), 3)
            .unwrap();
        assert!(r.test.accuracy >= 0.95, "{:?}", r.test);
        assert!(r.epochs_run <= 300);
        let again =
            centralized_baseline(&init(0), &train, &test, &cfg, &EarlyStopping::default(), 3)
                .unwrap();
        assert_eq!(r.model, again.model);
    }

    #[test]
    fn one_peer_one_round_equals_local_training() {
        let shard = separable(64, 4);
        let test = separable(50, 5);
        let cfg = TrainConfig::default();
        let fl = FlConfig {
            rounds: 1,
            participants_per_round: 1,
            sampling: PeerSampling::Uniform,
            local_epochs: cfg.epochs,
        };
        let r = fl_baseline(&init(1), std::slice::from_ref(&shard), &test, &cfg, &fl, 9).unwrap();
        let mut m = init(1);
        local_train(
            &mut m,
            &shard,
            &cfg,
            &mut ChaCha20Rng::seed_from_u64(fl_train_seed(9, 0, 0)),
        )
        .unwrap();
        assert_eq!(r.model.weights, m.weights);
    }

    #[test]
    fn average_is_exact_mean() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 4.0, 0.25];
        let c = [-1.0, 1.0, 0.0];
        let avg = average_weights([&a[..], &b[..], &c[..]]);
        for k in 0..3 {
            assert_eq!(avg[k], (a[k] + b[k] + c[k]) / 3.0);
        }
    }

    #[test]
    fn federated_training_improves_on_init() {
        let pool = separable(2_000, 6);
        let test = separable(500, 7);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let shards = partition_data(&pool, 100, Partition::Iid, &mut rng).unwrap();
        let fl = FlConfig {
            rounds: 10,
            participants_per_round: 20,
            ..FlConfig::default()
        };
        let r = fl_baseline(&init(2), &shards, &test, &TrainConfig::default(), &fl, 1).unwrap();
        assert_eq!(r.rounds.len(), 10);
        assert!(r.rounds.last().unwrap().accuracy > 0.9);
        assert!(fl_baseline(
            &init(2),
            &shards,
            &test,
            &TrainConfig::default(),
            &FlConfig {
                participants_per_round: 101,
                ..fl
            },
            1
        )
        .is_err());
    }

    #[test]
    fn train_alone_keeps_empty_shards_at_init() {
        let test = separable(100, 10);
        let shards = vec![Dataset::new(3, 2), separable(40, 11)];
        let evals = train_alone(&init(3), &shards, &test, &TrainConfig::default(), 0).unwrap();
        assert_eq!(evals[0], evaluate(&init(3), &test).unwrap());
        assert!(evals[1].accuracy > evals[0].accuracy);
    }
}
