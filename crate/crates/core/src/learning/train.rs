use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{ModelParams, Workspace};
use super::LearningError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub l1: f64,
    pub l2: f64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 5,
            l1: 0.001,
            l2: 0.0,
            learning_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let ok = self.batch_size > 0
            && self.l1 >= 0.0
            && self.l2 >= 0.0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LearningError::InvalidTrainConfig)
        }
    }
}

/// Mean training loss per completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on `data`. An empty shard leaves the model untouched.
pub fn local_train<R: Rng + ?Sized>(
    model: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport, LearningError> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if data.is_empty() {
        return Ok(report);
    }
    if data.dim() != model.arch.input_dim() {
        return Err(LearningError::Shape(format!(
            "data width {} vs model input {}",
            data.dim(),
            model.arch.input_dim()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.weights.len()];
    let mut ws = Workspace::default();
    for epoch in 0..cfg.epochs {
        idx.shuffle(rng);
        let mut total = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let loss = model.loss_and_grad(data, batch, cfg.l1, cfg.l2, &mut grad, &mut ws);
            if !loss.is_finite() {
                return Err(LearningError::NonFiniteLoss { epoch, loss });
            }
            total += loss * batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
        report.epoch_losses.push(total / data.len() as f64);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// Absent when no class has both positive and negative samples.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Auc,
}

impl Evaluation {
    pub fn metric(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Accuracy => Some(self.accuracy),
            MetricKind::Auc => self.auc,
        }
    }
}

pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<Evaluation, LearningError> {
    if data.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    let k = model.arch.num_classes();
    let mut ws = Workspace::default();
    let mut p = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(data.len() * k);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        model.predict_proba(data.x(i), &mut ws, &mut p);
        let y = data.y(i);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let pred = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap_or(0);
        correct += (pred == y) as usize;
        scores.extend_from_slice(&p);
    }
    let n = data.len();
    let auc = if k == 2 {
        let s: Vec<f64> = (0..n).map(|i| scores[i * 2 + 1]).collect();
        let pos: Vec<bool> = data.labels().iter().map(|&y| y == 1).collect();
        binary_auc(&s, &pos)
    } else {
        macro_auc(&scores, data.labels(), k)
    };
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        auc,
    })
}

/// Rank-based AUC with mid-ranks for ties; `None` if either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over classes where it is defined.
/// `scores` holds `k` probabilities per sample.
pub fn macro_auc(scores: &[f64], labels: &[usize], k: usize) -> Option<f64> {
    let aucs: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = (0..labels.len()).map(|i| scores[i * k + c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            binary_auc(&s, &pos)
        })
        .collect();
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}
