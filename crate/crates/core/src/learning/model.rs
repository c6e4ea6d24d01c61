use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::LearningError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// One logit, binary cross-entropy.
    Sigmoid,
    /// One logit per class, categorical cross-entropy.
    Softmax,
}

/// Dense feed-forward network: `tanh` hidden layers and a sigmoid or softmax
/// head. `layers[0]` is the input width, the last entry the output width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<usize>,
    pub output: OutputKind,
}

/// Where one dense layer lives inside the flat weight vector. The kernel is
/// stored row-major by output unit: `kernel[o * inputs + i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRange {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: Range<usize>,
    pub bias: Range<usize>,
}

impl Architecture {
    pub fn logistic(dim: usize) -> Self {
        Self {
            layers: vec![dim, 1],
            output: OutputKind::Sigmoid,
        }
    }

    pub fn mlp(dim: usize, hidden: usize, classes: usize) -> Self {
        if classes == 2 {
            Self {
                layers: vec![dim, hidden, 1],
                output: OutputKind::Sigmoid,
            }
        } else {
            Self {
                layers: vec![dim, hidden, classes],
                output: OutputKind::Softmax,
            }
        }
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(LearningError::InvalidArchitecture(
                "need at least input and output widths, all nonzero".into(),
            ));
        }
        let out = *self.layers.last().unwrap();
        match self.output {
            OutputKind::Sigmoid if out != 1 => Err(LearningError::InvalidArchitecture(
                "sigmoid head must have exactly one unit".into(),
            )),
            OutputKind::Softmax if out < 2 => Err(LearningError::InvalidArchitecture(
                "softmax head needs at least two units".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn num_classes(&self) -> usize {
        match self.output {
            OutputKind::Sigmoid => 2,
            OutputKind::Softmax => *self.layers.last().unwrap(),
        }
    }

    pub fn layer_ranges(&self) -> Vec<LayerRange> {
        let mut offset = 0;
        self.layers
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let kernel = offset..offset + inputs * outputs;
                let bias = kernel.end..kernel.end + outputs;
                offset = bias.end;
                LayerRange {
                    inputs,
                    outputs,
                    kernel,
                    bias,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// The unit peers train, exchange and average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub arch: Architecture,
    pub task: String,
}

/// Scratch buffers reused across samples.
#[derive(Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Glorot-uniform kernels and zero biases.
    pub fn init<R: Rng + ?Sized>(
        arch: Architecture,
        task: &str,
        rng: &mut R,
    ) -> Result<Self, LearningError> {
        arch.validate()?;
        let mut weights = vec![0.0; arch.param_count()];
        for l in arch.layer_ranges() {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut weights[l.kernel] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(Self {
            weights,
            arch,
            task: task.to_owned(),
        })
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        self.arch.validate()?;
        if self.weights.len() != self.arch.param_count() {
            return Err(LearningError::WeightCount {
                expected: self.arch.param_count(),
                got: self.weights.len(),
            });
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(LearningError::NonFiniteWeight(i));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], ws: &mut Workspace) {
        let ranges = self.arch.layer_ranges();
        ws.acts.resize_with(ranges.len() + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        let last = ranges.len() - 1;
        for (li, l) in ranges.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(li + 1);
            let input = &head[li];
            let out = &mut tail[0];
            out.clear();
            let kernel = &self.weights[l.kernel.clone()];
            let bias = &self.weights[l.bias.clone()];
            for o in 0..l.outputs {
                let row = &kernel[o * l.inputs..(o + 1) * l.inputs];
                let z = bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                out.push(if li < last { z.tanh() } else { z });
            }
        }
    }

    /// Class probabilities for one sample.
    pub fn predict_proba(&self, x: &[f64], ws: &mut Workspace, out: &mut Vec<f64>) {
        self.forward(x, ws);
        let logits = ws.acts.last().unwrap();
        out.clear();
        match self.arch.output {
            OutputKind::Sigmoid => {
                let p = sigmoid(logits[0]);
                out.extend_from_slice(&[1.0 - p, p]);
            }
            OutputKind::Softmax => softmax_into(logits, out),
        }
    }

    /// Cross-entropy of one sample from the output logits in `ws`.
    fn sample_loss(&self, logits: &[f64], y: usize) -> f64 {
        match self.arch.output {
            OutputKind::Sigmoid => {
                let z = logits[0];
                softplus(z) - if y == 1 { z } else { 0.0 }
            }
            OutputKind::Softmax => log_sum_exp(logits) - logits[y],
        }
    }

    fn penalty(&self, l1: f64, l2: f64) -> f64 {
        if l1 == 0.0 && l2 == 0.0 {
            return 0.0;
        }
        self.arch
            .layer_ranges()
            .iter()
            .flat_map(|l| &self.weights[l.kernel.clone()])
            .map(|w| l1 * w.abs() + l2 * w * w)
            .sum()
    }

    /// Mean cross-entropy over `indices` plus the kernel penalty.
    pub fn loss(&self, data: &Dataset, indices: &[usize], l1: f64, l2: f64) -> f64 {
        let mut ws = Workspace::default();
        let mut total = 0.0;
        for &i in indices {
            self.forward(data.x(i), &mut ws);
            total += self.sample_loss(ws.acts.last().unwrap(), data.y(i));
        }
        total / indices.len().max(1) as f64 + self.penalty(l1, l2)
    }

    /// Writes the gradient of [`Self::loss`] into `grad` and returns the loss.
    pub fn loss_and_grad(
        &self,
        data: &Dataset,
        indices: &[usize],
        l1: f64,
        l2: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let ranges = self.arch.layer_ranges();
        let depth = ranges.len();
        ws.deltas.resize_with(depth, Vec::new);
        let scale = 1.0 / indices.len().max(1) as f64;
        let mut total = 0.0;
        let mut probs = Vec::new();
        for &i in indices {
            self.forward(data.x(i), ws);
            let y = data.y(i);
            let logits = ws.acts.last().unwrap();
            total += self.sample_loss(logits, y);
            // Output delta: p − onehot(y).
            let top = &mut ws.deltas[depth - 1];
            top.clear();
            match self.arch.output {
                OutputKind::Sigmoid => {
                    top.push(sigmoid(logits[0]) - if y == 1 { 1.0 } else { 0.0 })
                }
                OutputKind::Softmax => {
                    softmax_into(logits, &mut probs);
                    top.extend(
                        probs
                            .iter()
                            .enumerate()
                            .map(|(c, p)| p - if c == y { 1.0 } else { 0.0 }),
                    );
                }
            }
            for li in (0..depth).rev() {
                let l = &ranges[li];
                let input = &ws.acts[li];
                let (lower, upper) = ws.deltas.split_at_mut(li);
                let delta = &upper[0];
                for o in 0..l.outputs {
                    let d = delta[o] * scale;
                    grad[l.bias.start + o] += d;
                    let row = &mut grad
                        [l.kernel.start + o * l.inputs..l.kernel.start + (o + 1) * l.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if li > 0 {
                    let kernel = &self.weights[l.kernel.clone()];
                    let below = &mut lower[li - 1];
                    below.clear();
                    for j in 0..l.inputs {
                        let back: f64 = (0..l.outputs)
                            .map(|o| kernel[o * l.inputs + j] * delta[o])
                            .sum();
                        let a = input[j];
                        below.push(back * (1.0 - a * a));
                    }
                }
            }
        }
        if l1 != 0.0 || l2 != 0.0 {
            for l in &ranges {
                for k in l.kernel.clone() {
                    let w = self.weights[k];
                    grad[k] += l1 * w.signum() * (w != 0.0) as u8 as f64 + 2.0 * l2 * w;
                }
            }
        }
        total * scale + self.penalty(l1, l2)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_into(z: &[f64], out: &mut Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(z.iter().map(|v| (v - m).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
}
