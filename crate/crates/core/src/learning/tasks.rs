use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{sigmoid, Architecture};
use super::train::MetricKind;
use super::LearningError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    /// Binary logistic regression with a rare positive class.
    ImbalancedLogreg,
    /// Multi-class Gaussian blobs learned by a one-hidden-layer network.
    BlobsMlp,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::ImbalancedLogreg, TaskId::BlobsMlp];

    pub fn name(self) -> &'static str {
        match self {
            Self::ImbalancedLogreg => "imbalanced-logreg",
            Self::BlobsMlp => "blobs-mlp",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = LearningError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| LearningError::UnknownTask(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Training pool that is partitioned among peers.
    pub train_samples: usize,
    pub test_samples: usize,
    pub dim: usize,
    /// Blobs only.
    pub classes: usize,
    /// Blobs only: hidden units.
    pub hidden: usize,
    /// Logistic only: target share of positives.
    pub positive_rate: f64,
    /// Distance scale between class structures; larger is easier.
    pub separation: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            train_samples: 10_000,
            test_samples: 2_000,
            dim: 10,
            classes: 10,
            hidden: 16,
            positive_rate: 0.1,
            separation: 1.0,
        }
    }
}

/// A generated task: pooled training data, a shared test set, the model
/// shape and the metric peers use to accept aggregates.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub id: TaskId,
    pub train: Dataset,
    pub test: Dataset,
    pub arch: Architecture,
    pub metric: MetricKind,
}

fn gaussian_vec<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn make_task(id: TaskId, p: &TaskParams, seed: u64) -> Result<TaskSpec, LearningError> {
    if p.dim == 0 || p.train_samples == 0 || p.test_samples == 0 {
        return Err(LearningError::Shape("task sizes must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match id {
        TaskId::ImbalancedLogreg => {
            if !(p.positive_rate > 0.0 && p.positive_rate < 1.0) {
                return Err(LearningError::Shape(
                    "positive rate must be in (0, 1)".into(),
                ));
            }
            let w: Vec<f64> =
                gaussian_vec(p.dim, 2.0 * p.separation / (p.dim as f64).sqrt(), &mut rng);
            let total = p.train_samples + p.test_samples;
            let xs: Vec<Vec<f64>> = (0..total)
                .map(|_| gaussian_vec(p.dim, 1.0, &mut rng))
                .collect();
            let margins: Vec<f64> = xs
                .iter()
                .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect();
            // Bisection on the intercept so the expected positive share hits the target.
            let rate = |b: f64| margins.iter().map(|m| sigmoid(m + b)).sum::<f64>() / total as f64;
            let (mut lo, mut hi) = (-50.0, 50.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rate(mid) < p.positive_rate {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let b = 0.5 * (lo + hi);
            let mut train = Dataset::new(p.dim, 2);
            let mut test = Dataset::new(p.dim, 2);
            for (i, (x, m)) in xs.iter().zip(&margins).enumerate() {
                let y = (rng.gen::<f64>() < sigmoid(m + b)) as usize;
                if i < p.train_samples {
                    train.push(x, y);
                } else {
                    test.push(x, y);
                }
            }
            Ok(TaskSpec {
                id,
                train,
                test,
                arch: Architecture::logistic(p.dim),
                metric: MetricKind::Auc,
            })
        }
        TaskId::BlobsMlp => {
            if p.classes < 2 || p.hidden == 0 {
                return Err(LearningError::Shape(
                    "blobs need >= 2 classes and a hidden layer".into(),
                ));
            }
            let centers: Vec<Vec<f64>> = (0..p.classes)
                .map(|_| gaussian_vec(p.dim, p.separation, &mut rng))
                .collect();
            let draw = |n: usize, rng: &mut ChaCha20Rng| {
                let mut d = Dataset::new(p.dim, p.classes);
                for _ in 0..n {
                    let y = rng.gen_range(0..p.classes);
                    let x: Vec<f64> = centers[y]
                        .iter()
                        .map(|c| {
                            let z: f64 = StandardNormal.sample(rng);
                            c + z
                        })
                        .collect();
                    d.push(&x, y);
                }
                d
            };
            let train = draw(p.train_samples, &mut rng);
            let test = draw(p.test_samples, &mut rng);
            Ok(TaskSpec {
                id,
                train,
                test,
                arch: Architecture::mlp(p.dim, p.hidden, p.classes),
                metric: MetricKind::Accuracy,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(t.name().parse::<TaskId>().unwrap(), t);
        }
        assert!("cifar".parse::<TaskId>().is_err());
    }

    #[test]
    fn imbalance_is_close_to_target() {
        let t = make_task(TaskId::ImbalancedLogreg, &TaskParams::default(), 1).unwrap();
        let h = t.train.class_histogram();
        let rate = h[1] as f64 / t.train.len() as f64;
        assert!((rate - 0.1).abs() < 0.02, "{rate}");
        assert_eq!(t.test.len(), 2_000);
    }

    #[test]
    fn generation_is_seeded() {
        let p = TaskParams::default();
        let a = make_task(TaskId::BlobsMlp, &p, 3).unwrap();
        let b = make_task(TaskId::BlobsMlp, &p, 3).unwrap();
        let c = make_task(TaskId::BlobsMlp, &p, 4).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train, c.train);
        assert_eq!(a.arch.param_count(), 10 * 16 + 16 + 16 * 10 + 10);
    }
}
