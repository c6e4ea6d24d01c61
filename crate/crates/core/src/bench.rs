//! Wall-clock scaling of packed Paillier operations with model size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{
    decode_weights, decrypt_packed, encode_weights, encrypt_packed, homomorphic_add, keygen,
    FixedPointCodec, HeError, KeygenMode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("no parameter counts given")]
    NoCounts,
    #[error("parameter counts must be positive")]
    ZeroCount,
    #[error("parameter counts must be strictly ascending")]
    Unsorted,
    #[error("repetitions must be positive")]
    ZeroReps,
    #[error(transparent)]
    He(#[from] HeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub param_count: usize,
    pub ciphertexts: usize,
    /// Encode plus encrypt, median over repetitions.
    pub encrypt_ms: f64,
    /// One homomorphic addition of two packed vectors.
    pub add_ms: f64,
    /// Decrypt plus decode.
    pub decrypt_ms: f64,
}

/// Least-squares line `y = slope · x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub key_bits: u64,
    pub rows: Vec<BenchRow>,
    pub encrypt: LinearFit,
    pub add: LinearFit,
    pub decrypt: LinearFit,
}

/// Ordinary least squares. `None` for fewer than two points or constant `x`.
/// A perfect fit through constant `y` reports `r2 = 1`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r2,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Times encrypt, add and decrypt for each parameter count on one thread
/// and fits each against the count.
pub fn bench_he(
    param_counts: &[usize],
    key_bits: u64,
    reps: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    if param_counts.is_empty() {
        return Err(BenchError::NoCounts);
    }
    if param_counts.contains(&0) {
        return Err(BenchError::ZeroCount);
    }
    if param_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Unsorted);
    }
    if reps == 0 {
        return Err(BenchError::ZeroReps);
    }
    // Packed operations parallelise internally; one worker keeps timings proportional to work.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single worker pool");
    pool.install(|| measure(param_counts, key_bits, reps, seed))
}

fn measure(
    param_counts: &[usize],
    key_bits: u64,
    reps: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let keys = keygen(key_bits, KeygenMode::InsecureSimulation, &mut rng)?;
    let pk = &keys.public;
    let n = pk.n();
    let codec = FixedPointCodec::default();
    let mut rows = Vec::with_capacity(param_counts.len());
    for &count in param_counts {
        let a: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut enc, mut add, mut dec) = (Vec::new(), Vec::new(), Vec::new());
        let mut ciphertexts = 0;
        for _ in 0..reps {
            let (ca, t_enc) = timed(|| -> Result<_, HeError> {
                let slots = encode_weights(&a, &codec, n)?;
                encrypt_packed(pk, &slots, &codec, &mut rng)
            });
            let ca = ca?;
            let cb = encrypt_packed(pk, &encode_weights(&b, &codec, n)?, &codec, &mut rng)?;
            let (sum, t_add) = timed(|| homomorphic_add(pk, &ca, &cb));
            let sum = sum?;
            let (out, t_dec) = timed(|| -> Result<_, HeError> {
                let slots = decrypt_packed(&keys.secret, &sum)?;
                decode_weights(&slots, &codec, n, 1)
            });
            let out = out?;
            debug_assert!(out
                .iter()
                .zip(a.iter().zip(&b))
                .all(|(s, (x, y))| (s - x - y).abs() < 1e-9));
            ciphertexts = ca.ciphertexts().len();
            enc.push(t_enc);
            add.push(t_add);
            dec.push(t_dec);
        }
        rows.push(BenchRow {
            param_count: count,
            ciphertexts,
            encrypt_ms: median(enc),
            add_ms: median(add),
            decrypt_ms: median(dec),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.param_count as f64).collect();
    let fit = |f: fn(&BenchRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        linear_fit(&xs, &ys).unwrap_or(LinearFit {
            slope: 0.0,
            intercept: ys[0],
            r2: f64::NAN,
        })
    };
    Ok(BenchReport {
        key_bits,
        encrypt: fit(|r| r.encrypt_ms),
        add: fit(|r| r.add_ms),
        decrypt: fit(|r| r.decrypt_ms),
        rows,
    })
}
