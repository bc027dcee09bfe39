//! First-order self-improvement, the generation-judgment gap, and the
//! two-dimensional worked example.
//!
//! Tilting the base by `lambda * v_c` changes alignment by
//! `lambda * v*^T Sigma v_c` to first order. For the Gaussian bases used here
//! the mean shift is exactly `lambda * Sigma v_c`, so the first-order
//! prediction is the exact alignment change for every `lambda`; the `O(lambda^2)`
//! remainder only appears for nonlinear safety functions
//! (see [`crate::nonlinear`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_world::{estimate_alignment, tilt_policy, tilted_gaussian_moments, Policy, RepresentationWorld};
use crate::linear_model::{alignment_correlation, normalize, Direction, ValueEncoding};
use crate::mc::{derive_seed, Estimate};
use crate::report::{Check, ExperimentResult};

/// Number of standard errors for a Monte Carlo difference to count as significant.
pub const SIGNIFICANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub lambda: f64,
    /// `lambda * v*^T Sigma v_c`, from the inputs alone.
    pub first_order_prediction: f64,
    /// Closed-form alignment change of the tilted Gaussian.
    pub exact_delta: f64,
    pub mc_delta: f64,
    pub mc_std_error: f64,
    /// `|mc_delta| > 4 * mc_std_error`.
    pub significant: bool,
    /// Prediction and Monte Carlo agree in sign (vacuously true when not significant).
    pub sign_agrees: bool,
}

impl ImprovementReport {
    pub fn mc_estimate(&self) -> Estimate {
        Estimate {
            value: self.mc_delta,
            std_error: self.mc_std_error,
        }
    }
}

/// `lambda * v*^T Sigma v_c`.
pub fn predict_improvement(world: &RepresentationWorld, v_c: &Direction, lambda: f64) -> Result<f64> {
    Ok(lambda * alignment_correlation(world.v_star(), v_c, Some(world.sigma()))?)
}

/// Compares the first-order prediction with the closed-form and Monte Carlo
/// alignment change of tilting the base by `lambda * v_c`.
///
/// The two Monte Carlo alignments use independent streams derived from `seed`.
pub fn verify_improvement(world: &RepresentationWorld, v_c: &Direction, lambda: f64, n: usize, seed: u64) -> Result<ImprovementReport> {
    verify_improvement_from(&world.base_policy(), v_c, lambda, n, seed)
}

/// As [`verify_improvement`], starting from an arbitrary base policy.
pub fn verify_improvement_from(base: &Policy<'_>, v_c: &Direction, lambda: f64, n: usize, seed: u64) -> Result<ImprovementReport> {
    let world = base.world();
    let first_order_prediction = predict_improvement(world, v_c, lambda)?;
    let tilted = tilt_policy(base, v_c, lambda)?;

    let (before, _) = tilted_gaussian_moments(world, base.score_direction())?;
    let (after, _) = tilted_gaussian_moments(world, tilted.score_direction())?;
    let exact_delta = after.add_scaled(&before, -1.0)?.dot(world.v_star())?;

    let mc = estimate_alignment(&tilted, n, derive_seed(seed, 1))?.minus_independent(&estimate_alignment(base, n, derive_seed(seed, 2))?);
    let significant = mc.value.abs() > SIGNIFICANCE * mc.std_error;
    let sign_agrees = !significant || (mc.value > 0.0 && first_order_prediction > 0.0) || (mc.value < 0.0 && first_order_prediction < 0.0);
    Ok(ImprovementReport {
        lambda,
        first_order_prediction,
        exact_delta,
        mc_delta: mc.value,
        mc_std_error: mc.std_error,
        significant,
        sign_agrees,
    })
}

/// A corpus in which a fraction `eta` of the text is value-relevant.
///
/// The value direction is the first basis vector of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusMixtureModel {
    pub eta: f64,
    pub d: usize,
    pub seed: u64,
}

impl CorpusMixtureModel {
    pub fn value_direction(&self) -> Result<Direction> {
        Direction::basis(self.d, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConstruction {
    /// `<v_c, v*> - <w, v*>`.
    pub gap: f64,
    /// Unit generation direction with `<w, v*> = eta`.
    pub w: Direction,
    /// Unit constitution direction with `<v_c, v*> = alpha_c`.
    pub v_c: Direction,
    pub v_star: Direction,
}

fn unit_with_projection(v_star: &Direction, projection: f64, rng: &mut ChaCha8Rng) -> Result<Direction> {
    let rest = (1.0 - projection * projection).max(0.0).sqrt();
    if rest == 0.0 {
        return Ok(v_star.scaled(projection));
    }
    loop {
        let g = Direction::new((0..v_star.dim()).map(|_| StandardNormal.sample(&mut *rng)).collect())?;
        let orth = g.add_scaled(v_star, -g.dot(v_star)?)?;
        if orth.norm() > 1e-6 {
            let orth = normalize(&orth)?;
            return v_star.scaled(projection).add_scaled(&orth, rest);
        }
    }
}

/// Builds unit `w` and `v_c` with `<w, v*> = eta` and `<v_c, v*> = alpha_c`
/// exactly; their components orthogonal to `v*` are random (seeded).
pub fn generation_judgment_gap(model: &CorpusMixtureModel, alpha_c: f64) -> Result<GapConstruction> {
    for (name, value) in [("eta", model.eta), ("alpha_c", alpha_c)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                name,
                value,
                range: "[0, 1]",
            });
        }
    }
    if model.d == 0 {
        return Err(Error::Empty("dimension"));
    }
    if model.d < 2 && (model.eta < 1.0 || alpha_c < 1.0) {
        return Err(Error::TooFew {
            what: "dimensions for an orthogonal component",
            required: 2,
            found: model.d,
        });
    }
    let v_star = model.value_direction()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let w = unit_with_projection(&v_star, model.eta, &mut rng)?;
    let v_c = unit_with_projection(&v_star, alpha_c, &mut rng)?;
    let gap = v_c.dot(&v_star)? - w.dot(&v_star)?;
    Ok(GapConstruction { gap, w, v_c, v_star })
}

/// Values of the worked example in `R^2`.
pub mod toy {
    pub const V_STAR: [f64; 2] = [1.0, 0.0];
    pub const W: [f64; 2] = [0.1, 0.995];
    pub const V_C: [f64; 2] = [0.95, 0.31];
    pub const V_ADV: [f64; 2] = [-0.8, 0.6];
    pub const LAMBDA: f64 = 1.0;
    /// Noise level of the example world (irrelevant to every printed value).
    pub const SIGMA_EPS: f64 = 0.5;
    /// Tolerance on the two-decimal normalized coordinates.
    pub const ROUNDING_TOL: f64 = 0.005;
}

/// Runs the worked example with the default seed and `10^5` samples per alignment.
pub fn run_toy_example() -> ExperimentResult {
    run_toy_example_with(100_000, 2024).expect("the worked example has fixed, valid inputs")
}

/// The worked example: base generation direction `w`, a well-aligned
/// constitution `v_c`, and an adversarial one, in an isotropic world.
pub fn run_toy_example_with(n: usize, seed: u64) -> Result<ExperimentResult> {
    let v_star = Direction::new(toy::V_STAR.to_vec())?;
    let w = Direction::new(toy::W.to_vec())?;
    let v_c = Direction::new(toy::V_C.to_vec())?;
    let v_adv = Direction::new(toy::V_ADV.to_vec())?;
    let world = RepresentationWorld::isotropic(ValueEncoding::new(v_star.clone(), toy::SIGMA_EPS)?)?;
    let base = Policy::new(&world, w.clone())?;
    let tol = toy::ROUNDING_TOL;

    let mut r = ExperimentResult::new("toy", seed);
    let exact = |r: &mut ExperimentResult, name: &str, value: f64, expected: f64| {
        r.metric(name, value);
        r.check(Check::absolute(name, value, expected, 1e-12));
    };
    let rounded = |r: &mut ExperimentResult, name: &str, value: f64, expected: f64| {
        r.metric(name, value);
        r.check(Check::absolute(name, value, expected, tol));
    };

    exact(&mut r, "w_dot_vstar", w.dot(&v_star)?, 0.1);
    exact(&mut r, "vc_dot_vstar", v_c.dot(&v_star)?, 0.95);

    let good = tilt_policy(&base, &v_c, toy::LAMBDA)?;
    let w1 = good.score_direction();
    exact(&mut r, "w_prime_0", w1.as_slice()[0], 1.05);
    exact(&mut r, "w_prime_1", w1.as_slice()[1], 1.305);
    let w1n = normalize(w1)?;
    rounded(&mut r, "w_prime_normalized_0", w1n.as_slice()[0], 0.63);
    rounded(&mut r, "w_prime_normalized_1", w1n.as_slice()[1], 0.78);
    rounded(&mut r, "w_prime_dot_vstar", w1n.dot(&v_star)?, 0.63);

    let bad = tilt_policy(&base, &v_adv, toy::LAMBDA)?;
    let w2 = bad.score_direction();
    exact(&mut r, "w_double_prime_0", w2.as_slice()[0], -0.7);
    exact(&mut r, "w_double_prime_1", w2.as_slice()[1], 1.595);
    let w2n = normalize(w2)?;
    rounded(&mut r, "w_double_prime_normalized_0", w2n.as_slice()[0], -0.40);
    rounded(&mut r, "w_double_prime_normalized_1", w2n.as_slice()[1], 0.92);
    rounded(&mut r, "w_double_prime_dot_vstar", w2n.dot(&v_star)?, -0.40);

    exact(&mut r, "predicted_delta", predict_improvement(&world, &v_c, toy::LAMBDA)?, 0.95);
    exact(&mut r, "predicted_delta_adv", predict_improvement(&world, &v_adv, toy::LAMBDA)?, -0.8);

    let gain = verify_improvement_from(&base, &v_c, toy::LAMBDA, n, derive_seed(seed, 10))?;
    r.estimate("mc_delta", gain.mc_estimate());
    r.check(Check::std_errors("mc_delta", gain.mc_estimate(), 0.95, SIGNIFICANCE));
    let drop = verify_improvement_from(&base, &v_adv, toy::LAMBDA, n, derive_seed(seed, 11))?;
    r.estimate("mc_delta_adv", drop.mc_estimate());
    r.check(Check::std_errors("mc_delta_adv", drop.mc_estimate(), -0.8, SIGNIFICANCE));
    r.check(Check::holds("adversary_degrades", drop.significant && drop.mc_delta < 0.0, drop.mc_delta, "mc_delta_adv < 0 beyond 4 std errors"));
    Ok(r)
}

/// Sign agreement between `v*^T Sigma v_c` and a Monte Carlo delta over random
/// worlds, together with the closed-form exactness residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSweep {
    pub reports: Vec<ImprovementReport>,
    /// Largest `|exact_delta - first_order_prediction|` relative to `max(1, |prediction|)`.
    pub max_exactness_residual: f64,
    pub significant: usize,
    pub disagreements: usize,
    pub mc_outside_4se: usize,
}

/// Runs [`verify_improvement`] on `n_worlds` random worlds with random `v_c`.
pub fn sign_sweep(n_worlds: usize, dim: usize, lambda: f64, n: usize, seed: u64) -> Result<SignSweep> {
    if dim == 0 {
        return Err(Error::Empty("dimension"));
    }
    let mut reports = Vec::with_capacity(n_worlds);
    for k in 0..n_worlds as u64 {
        let world = crate::gaussian_world::random_world(dim, derive_seed(seed, 3 * k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3 * k + 1));
        let v_c = Direction::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())?;
        reports.push(verify_improvement(&world, &v_c, lambda, n, derive_seed(seed, 3 * k + 2))?);
    }
    let max_exactness_residual = reports
        .iter()
        .map(|r| (r.exact_delta - r.first_order_prediction).abs() / r.first_order_prediction.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok(SignSweep {
        significant: reports.iter().filter(|r| r.significant).count(),
        disagreements: reports.iter().filter(|r| !r.sign_agrees).count(),
        mc_outside_4se: reports.iter().filter(|r| !r.mc_estimate().within(r.exact_delta, SIGNIFICANCE)).count(),
        max_exactness_residual,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_model::Covariance;

    fn dir(c: &[f64]) -> Direction {
        Direction::new(c.to_vec()).unwrap()
    }

    fn toy_world() -> RepresentationWorld {
        RepresentationWorld::isotropic(ValueEncoding::new(dir(&[1.0, 0.0]), 0.5).unwrap()).unwrap()
    }

    #[test]
    fn prediction_examples() {
        let w = toy_world();
        assert!((predict_improvement(&w, &dir(&[0.95, 0.31]), 1.0).unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(predict_improvement(&w, &dir(&[0.0, 1.0]), 1.0).unwrap(), 0.0);
        assert!((predict_improvement(&w, &dir(&[-0.8, 0.6]), 1.0).unwrap() + 0.8).abs() < 1e-15);
        assert!(predict_improvement(&w, &dir(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn gaussian_tilt_is_exact_at_every_lambda() {
        let world = RepresentationWorld::new(
            dir(&[0.3, -0.1, 0.8]),
            Covariance::from_spectrum(&[2.5, 1.0, 0.4], 5).unwrap(),
            ValueEncoding::new(dir(&[1.0, -0.5, 0.2]), 0.3).unwrap(),
        )
        .unwrap();
        let v_c = dir(&[0.2, 0.9, -0.4]);
        for lambda in [0.001, 0.01, 0.1, 1.0, 5.0, -3.0] {
            let r = verify_improvement(&world, &v_c, lambda, 2_000, 1).unwrap();
            assert!((r.exact_delta - r.first_order_prediction).abs() <= 1e-12 * (1.0 + r.first_order_prediction.abs()));
        }
    }

    #[test]
    fn zero_lambda_changes_nothing() {
        let r = verify_improvement(&toy_world(), &dir(&[0.95, 0.31]), 0.0, 50_000, 3).unwrap();
        assert_eq!(r.exact_delta, 0.0);
        assert_eq!(r.first_order_prediction, 0.0);
        assert!(r.mc_estimate().within(0.0, 4.0));
    }

    #[test]
    fn toy_monte_carlo_gain() {
        let r = verify_improvement(&toy_world(), &dir(&[0.95, 0.31]), 1.0, 100_000, 8).unwrap();
        assert!(r.mc_estimate().within(0.95, 4.0), "{r:?}");
        assert!(r.significant && r.sign_agrees);
    }

    #[test]
    fn gap_examples() {
        let g = generation_judgment_gap(&CorpusMixtureModel { eta: 0.1, d: 5, seed: 1 }, 0.95).unwrap();
        assert!((g.gap - 0.85).abs() < 1e-12);
        assert!((alignment_correlation(&g.w, &g.v_star, None).unwrap() - 0.1).abs() < 1e-10);
        assert!((alignment_correlation(&g.v_c, &g.v_star, None).unwrap() - 0.95).abs() < 1e-10);
        assert!((g.w.norm() - 1.0).abs() < 1e-12 && (g.v_c.norm() - 1.0).abs() < 1e-12);

        let same = generation_judgment_gap(&CorpusMixtureModel { eta: 1.0, d: 3, seed: 2 }, 1.0).unwrap();
        assert_eq!(same.gap, 0.0);
        assert_eq!(same.w, same.v_star);
        assert_eq!(same.v_c, same.v_star);

        let ideal = generation_judgment_gap(&CorpusMixtureModel { eta: 0.0, d: 4, seed: 3 }, 1.0).unwrap();
        assert_eq!(ideal.gap, 1.0);
    }

    #[test]
    fn gap_errors() {
        assert!(generation_judgment_gap(&CorpusMixtureModel { eta: 0.5, d: 1, seed: 0 }, 1.0).is_err());
        assert!(generation_judgment_gap(&CorpusMixtureModel { eta: 1.0, d: 1, seed: 0 }, 1.0).is_ok());
        assert!(generation_judgment_gap(&CorpusMixtureModel { eta: 1.5, d: 3, seed: 0 }, 1.0).is_err());
        assert!(generation_judgment_gap(&CorpusMixtureModel { eta: 0.5, d: 3, seed: 0 }, -0.1).is_err());
    }

    #[test]
    fn toy_example_reproduces_every_value() {
        let r = run_toy_example();
        let failed: Vec<_> = r.failed_checks().collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert!((r.get("w_prime_0").unwrap() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn small_sign_sweep() {
        let s = sign_sweep(10, 3, 0.5, 20_000, 4).unwrap();
        assert_eq!(s.disagreements, 0);
        assert!(s.max_exactness_residual < 1e-10);
    }
}
