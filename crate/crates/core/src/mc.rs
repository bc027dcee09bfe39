//! Seeded, chunked Monte Carlo plumbing and the estimators built on it.
//!
//! Work is split into fixed-size chunks; chunk `k` draws from a ChaCha8 stream
//! `k` of the caller's seed. Chunks run in parallel but results are merged in
//! chunk order, so every estimate is bit-identical for a given seed regardless
//! of the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per chunk.
pub const CHUNK: usize = 1 << 14;

/// A point estimate together with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }

    /// `|value - target| <= k * std_error` (an exact estimate must hit the target to 1e-12).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + 1e-12 * (1.0 + target.abs())
    }

    /// Difference of two independent estimates.
    pub fn minus_independent(&self, other: &Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            std_error: self.std_error.hypot(other.std_error),
        }
    }
}

/// RNG for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Derives an independent seed from `seed` and a tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(rng, len)` over the chunks covering `n` draws; results in chunk order.
pub fn par_chunks<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let len = CHUNK.min(n - k * CHUNK);
            let mut rng = chunk_rng(seed, k as u64);
            f(&mut rng, len)
        })
        .collect()
}

/// Anything that can draw i.i.d. representations.
pub trait RepresentationSampler: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

/// Draws `n` representations and maps each through `f`, preserving draw order.
///
/// Two calls with the same sampler and seed see the same representations,
/// which is what the common-random-number comparisons rely on.
pub fn map_samples<S, T, F>(sampler: &S, n: usize, seed: u64, f: F) -> Vec<T>
where
    S: RepresentationSampler + ?Sized,
    T: Send,
    F: Fn(&[f64]) -> T + Sync,
{
    let d = sampler.dim();
    par_chunks(n, seed, |rng, len| {
        let mut h = vec![0.0; d];
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            sampler.draw(rng, &mut h);
            out.push(f(&h));
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// `N(mean, L L^T)` sampler.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        crate::error::ensure_dim(mean.len(), factor.nrows())?;
        Ok(Self { mean, factor })
    }
}

impl RepresentationSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.factor.ncols()).map(|_| StandardNormal.sample(rng)).collect();
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.mean[r];
            for (c, zc) in z.iter().enumerate() {
                acc += self.factor[(r, c)] * zc;
            }
            *o = acc;
        }
    }
}

/// Wraps a closure as a sampler, for non-Gaussian bases.
pub struct FnSampler<F> {
    dim: usize,
    f: F,
}

impl<F> FnSampler<F>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> RepresentationSampler for FnSampler<F>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        (self.f)(rng, out)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample mean and its standard error.
pub fn mean_estimate(xs: &[f64]) -> Result<Estimate> {
    if xs.len() < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: xs.len(),
        });
    }
    Ok(Estimate {
        value: mean(xs),
        std_error: (variance(xs) / xs.len() as f64).sqrt(),
    })
}

/// Sample covariance with an influence-function standard error.
pub fn covariance_estimate(xs: &[f64], ys: &[f64]) -> Result<Estimate> {
    crate::error::ensure_dim(xs.len(), ys.len())?;
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: n,
        });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let products: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let cov = products.iter().sum::<f64>() / (n - 1) as f64;
    Ok(Estimate {
        value: cov,
        std_error: (variance(&products) / n as f64).sqrt(),
    })
}

/// Self-normalized weighted mean `sum w_i v_i / sum w_i` with `w_i = exp(log_w_i)`.
///
/// The largest exponent is subtracted before exponentiating, so the result is
/// invariant to adding a constant to every log-weight. The standard error is
/// the delta-method one, `sqrt(sum w_i^2 (v_i - est)^2) / sum w_i`.
pub fn self_normalized_mean(log_weights: &[f64], values: &[f64]) -> Result<Estimate> {
    crate::error::ensure_dim(log_weights.len(), values.len())?;
    if log_weights.len() < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: log_weights.len(),
        });
    }
    let weights = stabilized_weights(log_weights)?;
    let total: f64 = weights.iter().sum();
    let est = weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / total;
    let var = weights
        .iter()
        .zip(values)
        .map(|(w, v)| (w * (v - est)).powi(2))
        .sum::<f64>()
        / (total * total);
    if !est.is_finite() || !var.is_finite() {
        return Err(Error::NonFinite("importance-weighted estimate"));
    }
    Ok(Estimate {
        value: est,
        std_error: var.sqrt(),
    })
}

/// `exp(log_w - max log_w)`; errors on non-finite exponents or an all-zero result.
pub fn stabilized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("log-weights"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|a| (a - max).exp()).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Degenerate("all importance weights vanish".into()));
    }
    Ok(weights)
}
