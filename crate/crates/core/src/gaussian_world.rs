//! The synthetic Gaussian representation universe and exponentially tilted policies.
//!
//! The base policy draws `h ~ N(mu, Sigma)`. A policy with score direction `u`
//! reweights it by `exp(<h, u>)`. For a Gaussian base this tilt is exact in
//! closed form: the tilted law is `N(mu + Sigma u, Sigma)`. The first-order
//! mean expansion `E_{u+du}[h] = E_u[h] + Sigma du` therefore has no
//! higher-order remainder here. Non-Gaussian bases are handled only through
//! [`importance_tilt_expectation`].

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_dim, Error, Result};
use crate::linear_model::{Covariance, Direction, ValueEncoding};
use crate::mc::{self, Estimate, GaussianSampler, RepresentationSampler};

/// Base distribution `N(mu, Sigma)` plus the value encoding that scores it.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationWorld {
    mu: Direction,
    sigma: Covariance,
    encoding: ValueEncoding,
}

impl RepresentationWorld {
    pub fn new(mu: Direction, sigma: Covariance, encoding: ValueEncoding) -> Result<Self> {
        ensure_dim(sigma.dim(), mu.dim())?;
        ensure_dim(sigma.dim(), encoding.dim())?;
        Ok(Self { mu, sigma, encoding })
    }

    /// Centered, whitened world: `mu = 0`, `Sigma = I`.
    pub fn isotropic(encoding: ValueEncoding) -> Result<Self> {
        let d = encoding.dim();
        Self::new(Direction::zeros(d)?, Covariance::identity(d)?, encoding)
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn mu(&self) -> &Direction {
        &self.mu
    }

    pub fn sigma(&self) -> &Covariance {
        &self.sigma
    }

    pub fn encoding(&self) -> &ValueEncoding {
        &self.encoding
    }

    pub fn v_star(&self) -> &Direction {
        &self.encoding.v_star
    }

    pub fn sigma_s(&self) -> f64 {
        self.encoding
            .sigma_s(Some(&self.sigma))
            .expect("dimensions checked at construction")
    }

    /// Same base distribution with a different value encoding.
    pub fn with_encoding(&self, encoding: ValueEncoding) -> Result<Self> {
        Self::new(self.mu.clone(), self.sigma.clone(), encoding)
    }

    /// Same covariance and encoding, different mean.
    pub fn with_mean(&self, mu: Direction) -> Result<Self> {
        Self::new(mu, self.sigma.clone(), self.encoding.clone())
    }

    /// The untilted policy `pi_0`.
    pub fn base_policy(&self) -> Policy<'_> {
        Policy {
            score_direction: Direction::zeros(self.dim()).expect("dim >= 1"),
            world: self,
        }
    }

    fn sampler_with_mean(&self, mean: DVector<f64>) -> GaussianSampler {
        GaussianSampler::new(mean, self.sigma.factor().clone()).expect("dimensions checked at construction")
    }
}

impl RepresentationSampler for RepresentationWorld {
    fn dim(&self) -> usize {
        self.mu.dim()
    }

    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]) {
        let factor = self.sigma.factor();
        let z: Vec<f64> = (0..factor.ncols()).map(|_| StandardNormal.sample(rng)).collect();
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.mu.as_slice()[r] + (0..z.len()).map(|c| factor[(r, c)] * z[c]).sum::<f64>();
        }
    }
}

/// A random world for property checks: mean entries `N(0, 0.5^2)`, spectrum
/// uniform in `[0.2, 3]` on a Haar-random basis, `v* ~ N(0, I)`, and
/// `sigma_eps` uniform in `[0, 1]`.
pub fn random_world(dim: usize, seed: u64) -> Result<RepresentationWorld> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |scale: f64| -> Vec<f64> { (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect() };
    let mu = Direction::new(normal(0.5))?;
    let v_star = Direction::new(normal(1.0))?;
    let spectrum: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..3.0)).collect();
    let sigma = Covariance::from_spectrum(&spectrum, rng.random())?;
    let sigma_eps = rng.random_range(0.0..1.0);
    RepresentationWorld::new(mu, sigma, ValueEncoding::new(v_star, sigma_eps)?)
}

/// Energy-based policy `pi_u(h) ∝ pi_0(h) exp(<h, u>)` over a world's base.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<'w> {
    score_direction: Direction,
    world: &'w RepresentationWorld,
}

impl<'w> Policy<'w> {
    pub fn new(world: &'w RepresentationWorld, score_direction: Direction) -> Result<Self> {
        ensure_dim(world.dim(), score_direction.dim())?;
        Ok(Self { score_direction, world })
    }

    pub fn score_direction(&self) -> &Direction {
        &self.score_direction
    }

    pub fn world(&self) -> &'w RepresentationWorld {
        self.world
    }

    /// Closed-form `Align(pi_u) = <mu + Sigma u, v*>`.
    pub fn exact_alignment(&self) -> f64 {
        let (mean, _) = tilted_gaussian_moments(self.world, &self.score_direction).expect("dimensions checked");
        mean.dot(self.world.v_star()).expect("dimensions checked")
    }
}

/// Representations drawn from a policy with their noisy safety scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// `n x d`, one representation per row.
    pub representations: DMatrix<f64>,
    /// `S_i = <h_i, v*> + eps_i`.
    pub safety_scores: Vec<f64>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.safety_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.safety_scores.is_empty()
    }
}

/// Shifts the score direction: `u + lambda * direction`. Negative `lambda` is allowed.
pub fn tilt_policy<'w>(base: &Policy<'w>, direction: &Direction, lambda: f64) -> Result<Policy<'w>> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite("lambda"));
    }
    Ok(Policy {
        score_direction: base.score_direction.add_scaled(direction, lambda)?,
        world: base.world,
    })
}

/// Mean and covariance of the base tilted by `exp(<h, u>)`: `(mu + Sigma u, Sigma)`.
///
/// Exact for Gaussian bases.
pub fn tilted_gaussian_moments<'a>(world: &'a RepresentationWorld, u: &Direction) -> Result<(Direction, &'a Covariance)> {
    let shift = world.sigma.apply(u)?;
    Ok((world.mu.add_scaled(&shift, 1.0)?, &world.sigma))
}

/// Draws `n` representations from `policy` with noisy safety scores.
///
/// The same seed always yields the same batch, independent of thread count.
pub fn sample_policy(policy: &Policy<'_>, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::TooFew {
            what: "samples",
            required: 1,
            found: 0,
        });
    }
    let world = policy.world;
    let (mean, _) = tilted_gaussian_moments(world, &policy.score_direction)?;
    let sampler = world.sampler_with_mean(mean.vector().clone());
    let d = world.dim();
    let v_star = world.v_star().as_slice();
    let sigma_eps = world.encoding.sigma_eps;
    let chunks = mc::par_chunks(n, seed, |rng, len| {
        let mut rows = vec![0.0; len * d];
        let mut scores = Vec::with_capacity(len);
        for row in rows.chunks_mut(d) {
            sampler.draw(rng, row);
            let eps: f64 = StandardNormal.sample(rng);
            let proxy: f64 = row.iter().zip(v_star).map(|(h, v)| h * v).sum();
            scores.push(if sigma_eps > 0.0 { proxy + sigma_eps * eps } else { proxy });
        }
        (rows, scores)
    });
    let mut rows = Vec::with_capacity(n * d);
    let mut safety_scores = Vec::with_capacity(n);
    for (r, s) in chunks {
        rows.extend(r);
        safety_scores.extend(s);
    }
    Ok(SampleBatch {
        representations: DMatrix::from_row_slice(n, d, &rows),
        safety_scores,
        seed,
    })
}

/// Monte Carlo `Align(pi) = E[S]` with its standard error.
pub fn estimate_alignment(policy: &Policy<'_>, n: usize, seed: u64) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: n,
        });
    }
    let batch = sample_policy(policy, n, seed)?;
    mc::mean_estimate(&batch.safety_scores)
}

/// Self-normalized importance estimate of `E_{pi_lambda}[phi(h)]`, where
/// `pi_lambda ∝ base · exp(lambda <h, u>)` and `h` is drawn from `base`.
///
/// Exponents are max-shifted before exponentiating; only non-finite results
/// are errors.
pub fn importance_tilt_expectation<S, F>(
    base: &S,
    u: &Direction,
    lambda: f64,
    phi: F,
    n: usize,
    seed: u64,
) -> Result<Estimate>
where
    S: RepresentationSampler + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (log_w, values) = tilt_draws(base, u, lambda, phi, n, seed)?;
    mc::self_normalized_mean(&log_w, &values)
}

/// Log-weights `lambda <h_i, u>` and values `phi(h_i)` for `n` base draws.
pub(crate) fn tilt_draws<S, F>(base: &S, u: &Direction, lambda: f64, phi: F, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)>
where
    S: RepresentationSampler + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    ensure_dim(base.dim(), u.dim())?;
    if !lambda.is_finite() {
        return Err(Error::NonFinite("lambda"));
    }
    if n < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: n,
        });
    }
    let us = u.as_slice();
    let pairs = mc::map_samples(base, n, seed, |h| {
        let score: f64 = h.iter().zip(us).map(|(a, b)| a * b).sum();
        (lambda * score, phi(h))
    });
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(c: &[f64]) -> Direction {
        Direction::new(c.to_vec()).unwrap()
    }

    fn toy_world(sigma_eps: f64) -> RepresentationWorld {
        RepresentationWorld::isotropic(ValueEncoding::new(dir(&[1.0, 0.0]), sigma_eps).unwrap()).unwrap()
    }

    #[test]
    fn tilt_examples() {
        let world = toy_world(0.0);
        let base = Policy::new(&world, dir(&[0.1, 0.995])).unwrap();
        let good = tilt_policy(&base, &dir(&[0.95, 0.31]), 1.0).unwrap();
        let g = good.score_direction().as_slice();
        assert!((g[0] - 1.05).abs() < 1e-12 && (g[1] - 1.305).abs() < 1e-12);
        let same = tilt_policy(&base, &dir(&[0.95, 0.31]), 0.0).unwrap();
        assert_eq!(same.score_direction(), base.score_direction());
        let bad = tilt_policy(&base, &dir(&[-0.8, 0.6]), 1.0).unwrap();
        let b = bad.score_direction().as_slice();
        assert!((b[0] + 0.7).abs() < 1e-12 && (b[1] - 1.595).abs() < 1e-12);
        assert!(tilt_policy(&base, &dir(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn moments_closed_form() {
        let world = toy_world(0.0);
        let (m, c) = tilted_gaussian_moments(&world, &dir(&[1.0, 0.0])).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0]);
        assert_eq!(c.matrix(), &DMatrix::identity(2, 2));
        let (m0, _) = tilted_gaussian_moments(&world, &dir(&[0.0, 0.0])).unwrap();
        assert_eq!(m0.as_slice(), world.mu().as_slice());

        let aniso = RepresentationWorld::new(
            dir(&[0.0, 0.0]),
            Covariance::diagonal(&[2.0, 1.0]).unwrap(),
            ValueEncoding::new(dir(&[1.0, 0.0]), 0.0).unwrap(),
        )
        .unwrap();
        let (m, _) = tilted_gaussian_moments(&aniso, &dir(&[1.0, 1.0])).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn zero_noise_scores_are_exact_projections() {
        let world = toy_world(0.0);
        let batch = sample_policy(&world.base_policy(), 1, 4).unwrap();
        let h = batch.representations.row(0);
        assert_eq!(batch.safety_scores[0], h[0]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let world = toy_world(0.5);
        let p = Policy::new(&world, dir(&[0.3, -0.2])).unwrap();
        let a = sample_policy(&p, 40_000, 17).unwrap();
        let b = sample_policy(&p, 40_000, 17).unwrap();
        assert_eq!(a, b);
        let c = sample_policy(&p, 40_000, 18).unwrap();
        assert_ne!(a.safety_scores, c.safety_scores);
    }

    #[test]
    fn base_alignment_is_centered() {
        let world = toy_world(0.5);
        let n = 100_000;
        let est = estimate_alignment(&world.base_policy(), n, 3).unwrap();
        let bound = 3.0 * world.sigma_s() / (n as f64).sqrt();
        assert!(est.value.abs() <= bound, "{est:?}");
        assert!(est.within(0.0, 3.0));
    }

    #[test]
    fn alignment_matches_closed_form() {
        let world = RepresentationWorld::new(
            dir(&[0.2, -0.4, 1.0]),
            Covariance::from_spectrum(&[2.0, 1.0, 0.3], 8).unwrap(),
            ValueEncoding::new(dir(&[0.5, 1.0, -0.3]), 0.4).unwrap(),
        )
        .unwrap();
        let p = Policy::new(&world, dir(&[0.4, 0.1, -0.7])).unwrap();
        let est = estimate_alignment(&p, 100_000, 12).unwrap();
        assert!(est.within(p.exact_alignment(), 4.0), "{est:?} vs {}", p.exact_alignment());
    }

    #[test]
    fn toy_alignment_gain() {
        let world = toy_world(0.0);
        let tilted = tilt_policy(&world.base_policy(), &dir(&[0.95, 0.31]), 1.0).unwrap();
        assert!((tilted.exact_alignment() - 0.95).abs() < 1e-12);
        let gain = estimate_alignment(&tilted, 100_000, 1)
            .unwrap()
            .minus_independent(&estimate_alignment(&world.base_policy(), 100_000, 2).unwrap());
        assert!(gain.within(0.95, 4.0), "{gain:?}");
    }

    #[test]
    fn importance_without_tilt_is_plain_mean() {
        let world = toy_world(0.0);
        let u = dir(&[1.0, 1.0]);
        let est = importance_tilt_expectation(&world, &u, 0.0, |h| h[0] * h[0], 50_000, 5).unwrap();
        let plain: Vec<f64> = mc::map_samples(&world, 50_000, 5, |h| h[0] * h[0]);
        assert!((est.value - mc::mean(&plain)).abs() < 1e-12);
    }

    #[test]
    fn sample_covariance_is_preserved_under_tilt() {
        let world = RepresentationWorld::new(
            dir(&[0.0, 0.0]),
            Covariance::from_row_major(2, &[2.0, 0.6, 0.6, 1.0]).unwrap(),
            ValueEncoding::new(dir(&[1.0, 0.0]), 0.0).unwrap(),
        )
        .unwrap();
        let n = 200_000;
        let p = Policy::new(&world, dir(&[1.0, -2.0])).unwrap();
        let batch = sample_policy(&p, n, 21).unwrap();
        let cols: Vec<Vec<f64>> = (0..2).map(|c| batch.representations.column(c).iter().copied().collect()).collect();
        for i in 0..2 {
            for j in 0..2 {
                let c = mc::covariance_estimate(&cols[i], &cols[j]).unwrap().value;
                assert!((c - world.sigma().matrix()[(i, j)]).abs() < 5.0 / (n as f64).sqrt(), "({i},{j}) {c}");
            }
        }
    }
}
