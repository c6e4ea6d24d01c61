use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::AdversaryError;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// One-dimensional Gaussian kernel density over a layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightKde {
    support: Vec<f64>,
    sigma: f64,
}

impl WeightKde {
    pub fn new(support: Vec<f64>, sigma: f64) -> Result<Self, AdversaryError> {
        if support.is_empty() {
            return Err(AdversaryError::EmptySupport);
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(AdversaryError::InvalidSigma(sigma));
        }
        Ok(Self { support, sigma })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Unnormalised density `Σ G(x − w_i; σ)`; integrates to the support size.
    pub fn density(&self, x: f64) -> f64 {
        let s = self.sigma;
        self.support
            .iter()
            .map(|w| {
                let z = (x - w) / s;
                INV_SQRT_2PI / s * (-0.5 * z * z).exp()
            })
            .sum()
    }
}

/// Silverman's rule of thumb, `0.9 · min(sd, IQR/1.34) · n^(−1/5)`. Falls
/// back to the spread that is nonzero, and to a tiny width for constant input.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-9;
    let n = values.len();
    if n < 2 {
        return FLOOR;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * (n as f64).powf(-0.2)).max(FLOOR)
}

/// Exact draws from the KDE: a uniformly chosen support point plus
/// Gaussian noise of width `σ`.
pub fn sample_noisy_weights<R: Rng + ?Sized>(
    kde: &WeightKde,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    let noise = Normal::new(0.0, kde.sigma).expect("validated width");
    (0..count)
        .map(|_| kde.support[rng.gen_range(0..kde.support.len())] + noise.sample(rng))
        .collect()
}
