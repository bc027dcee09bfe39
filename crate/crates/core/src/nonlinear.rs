//! Nonlinear safety functions: covariance form of the improvement, the
//! Gaussian (Stein) directional form, the non-monotone quadratic, and the best
//! member of a finite family of preference functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian_world::{tilt_draws, RepresentationWorld};
use crate::linear_model::Direction;
use crate::mc::{self, covariance_estimate, derive_seed, map_samples, mean_estimate, Estimate, RepresentationSampler};

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance between analytic and finite-difference gradients.
pub const FD_TOL: f64 = 1e-4;
/// Points at which gradients are checked.
pub const FD_POINTS: usize = 10;

/// `f(h)` for the supported shapes; each exposes an analytic gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SafetyFunction {
    /// `<h, v>`.
    Linear { v: Direction },
    /// `-(<h, v> - tau)^2`.
    Quadratic { v: Direction, tau: f64 },
    /// `tanh(<h, v> / scale)`.
    Saturating { v: Direction, scale: f64 },
}

impl SafetyFunction {
    pub fn linear(v: Direction) -> Self {
        Self::Linear { v }
    }

    pub fn quadratic(v: Direction, tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::NonFinite("tau"));
        }
        Ok(Self::Quadratic { v, tau })
    }

    pub fn saturating(v: Direction, scale: f64) -> Result<Self> {
        let f = Self::Saturating { v, scale };
        f.validate()?;
        Ok(f)
    }

    /// Rechecks parameters, for values built without the constructors (e.g. deserialized).
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear { .. } => Ok(()),
            Self::Quadratic { tau, .. } if !tau.is_finite() => Err(Error::NonFinite("tau")),
            Self::Quadratic { .. } => Ok(()),
            Self::Saturating { scale, .. } if !(*scale > 0.0 && scale.is_finite()) => Err(Error::OutOfRange {
                name: "scale",
                value: *scale,
                range: "(0, inf)",
            }),
            Self::Saturating { .. } => Ok(()),
        }
    }

    pub fn direction(&self) -> &Direction {
        match self {
            Self::Linear { v } | Self::Quadratic { v, .. } | Self::Saturating { v, .. } => v,
        }
    }

    pub fn dim(&self) -> usize {
        self.direction().dim()
    }

    fn projection(&self, h: &[f64]) -> f64 {
        h.iter().zip(self.direction().as_slice()).map(|(a, b)| a * b).sum()
    }

    /// Derivative of `f` with respect to `t = <h, v>`.
    fn slope(&self, t: f64) -> f64 {
        match self {
            Self::Linear { .. } => 1.0,
            Self::Quadratic { tau, .. } => -2.0 * (t - tau),
            Self::Saturating { scale, .. } => {
                let th = (t / scale).tanh();
                (1.0 - th * th) / scale
            }
        }
    }

    pub fn value(&self, h: &[f64]) -> f64 {
        let t = self.projection(h);
        match self {
            Self::Linear { .. } => t,
            Self::Quadratic { tau, .. } => -(t - tau).powi(2),
            Self::Saturating { scale, .. } => (t / scale).tanh(),
        }
    }

    /// Writes `grad f(h)` into `out`.
    pub fn gradient_into(&self, h: &[f64], out: &mut [f64]) {
        let s = self.slope(self.projection(h));
        for (o, v) in out.iter_mut().zip(self.direction().as_slice()) {
            *o = s * v;
        }
    }

    pub fn gradient(&self, h: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; h.len()];
        self.gradient_into(h, &mut g);
        g
    }
}

/// Largest analytic-vs-central-difference gap of `f` at `points`, relative to
/// `max(|grad|_inf, 1)`. Errors with the offending component when it exceeds [`FD_TOL`].
pub fn gradient_check(f: &SafetyFunction, points: &[Vec<f64>]) -> Result<f64> {
    for h in points {
        ensure_dim(f.dim(), h.len())?;
    }
    check_gradient(|h| f.value(h), |h| f.gradient(h), points)
}

/// [`gradient_check`] for an arbitrary function and claimed gradient.
pub fn check_gradient<V, G>(value: V, gradient: G, points: &[Vec<f64>]) -> Result<f64>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut worst = 0.0f64;
    for h in points {
        let analytic = gradient(h);
        ensure_dim(h.len(), analytic.len())?;
        let scale = analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        let mut probe = h.clone();
        for (i, &a) in analytic.iter().enumerate() {
            probe[i] = h[i] + FD_STEP;
            let up = value(&probe);
            probe[i] = h[i] - FD_STEP;
            let down = value(&probe);
            probe[i] = h[i];
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / scale;
            if rel > FD_TOL {
                return Err(Error::GradientMismatch {
                    component: i,
                    analytic: a,
                    numeric,
                });
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// [`FD_POINTS`] draws from the world's base distribution.
pub fn gradient_check_points(world: &RepresentationWorld, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..FD_POINTS)
        .map(|_| {
            let mut h = vec![0.0; world.dim()];
            world.draw(&mut rng, &mut h);
            h
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceImprovement {
    pub lambda: f64,
    /// `lambda * Cov_base(f(h), <h, v_c>)`.
    pub prediction: Estimate,
    /// Tilted minus base mean of `f`, by importance weighting on the same draws.
    pub mc_delta: Estimate,
    /// `mc_delta - prediction`; its error accounts for the shared draws.
    pub remainder: Estimate,
}

/// First-order covariance prediction against the importance-sampled change in
/// `E[f]` from tilting the base by `lambda * v_c`.
///
/// Both quantities use the same `n` base draws, so for a given seed the draws
/// are also shared across `lambda` values and the remainder carries little noise.
pub fn covariance_improvement(world: &RepresentationWorld, f: &SafetyFunction, v_c: &Direction, lambda: f64, n: usize, seed: u64) -> Result<CovarianceImprovement> {
    ensure_dim(world.dim(), f.dim())?;
    f.validate()?;
    let (scores, values) = tilt_draws(world, v_c, 1.0, |h| f.value(h), n, seed)?;
    let log_w: Vec<f64> = scores.iter().map(|s| lambda * s).collect();
    let weights = mc::stabilized_weights(&log_w)?;
    let total: f64 = weights.iter().sum();
    let nf = n as f64;

    let base_mean = mc::mean(&values);
    let tilted_mean = weights.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>() / total;
    let cov = covariance_estimate(&values, &scores)?;
    let score_mean = mc::mean(&scores);

    let mut infl_delta = Vec::with_capacity(n);
    let mut infl_pred = Vec::with_capacity(n);
    for ((w, v), s) in weights.iter().zip(&values).zip(&scores) {
        let d = nf * w / total * (v - tilted_mean) - (v - base_mean);
        infl_delta.push(d);
        infl_pred.push(lambda * ((v - base_mean) * (s - score_mean) - cov.value));
    }
    let se = |xs: &mut dyn Iterator<Item = f64>| (xs.map(|x| x * x).sum::<f64>()).sqrt() / nf;
    let mc_delta = Estimate {
        value: tilted_mean - base_mean,
        std_error: se(&mut infl_delta.iter().copied()),
    };
    let prediction = Estimate {
        value: lambda * cov.value,
        std_error: lambda.abs() * cov.std_error,
    };
    let remainder = Estimate {
        value: mc_delta.value - prediction.value,
        std_error: se(&mut infl_delta.iter().zip(&infl_pred).map(|(a, b)| a - b)),
    };
    if !mc_delta.value.is_finite() || !remainder.std_error.is_finite() {
        return Err(Error::NonFinite("covariance improvement"));
    }
    Ok(CovarianceImprovement {
        lambda,
        prediction,
        mc_delta,
        remainder,
    })
}

/// `(mc_delta - prediction) / lambda^2` across a decreasing `lambda` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderStudy {
    pub points: Vec<CovarianceImprovement>,
    /// Scaled remainders, one per `lambda`.
    pub scaled: Vec<Estimate>,
}

impl RemainderStudy {
    /// No scaled remainder exceeds the one at the largest `lambda` by more than
    /// 4 standard errors of each, or more than a factor of 2 in magnitude.
    /// A missing `O(lambda^2)` bound would show as doubling at every halving.
    pub fn is_bounded(&self) -> bool {
        let first = self.scaled[0];
        self.scaled.iter().all(|r| {
            let slack = 4.0 * first.std_error.hypot(r.std_error);
            r.value.abs() <= 2.0 * first.value.abs() + slack
        })
    }
}

pub fn remainder_study(world: &RepresentationWorld, f: &SafetyFunction, v_c: &Direction, lambdas: &[f64], n: usize, seed: u64) -> Result<RemainderStudy> {
    if lambdas.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    let mut scaled = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if lambda == 0.0 {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: lambda,
                range: "nonzero",
            });
        }
        let p = covariance_improvement(world, f, v_c, lambda, n, seed)?;
        let l2 = lambda * lambda;
        scaled.push(Estimate {
            value: p.remainder.value / l2,
            std_error: p.remainder.std_error / l2,
        });
        points.push(p);
    }
    Ok(RemainderStudy { points, scaled })
}

/// Exact change in `E[f]` for a quadratic `f` under a Gaussian base tilted by
/// `lambda * v_c`: with `m = <mu, v> - tau` and `a = v^T Sigma v_c`,
/// `-2 m a lambda - a^2 lambda^2`. Its first-order part is the covariance
/// prediction, so the scaled remainder is `-a^2` for every `lambda`.
pub fn quadratic_exact_delta(world: &RepresentationWorld, v: &Direction, tau: f64, v_c: &Direction, lambda: f64) -> Result<f64> {
    let m = world.mu().dot(v)? - tau;
    let a = world.sigma().bilinear(v, v_c)?;
    Ok(-2.0 * m * a * lambda - a * a * lambda * lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinDirection {
    /// Monte Carlo `E[grad f(h)]` under the base.
    pub v_bar: Direction,
    pub std_errors: Vec<f64>,
    /// Worst relative finite-difference gap seen while validating gradients.
    pub gradient_check: f64,
}

/// Mean gradient of `f` under the world's base, after checking the analytic
/// gradient against central differences at [`FD_POINTS`] base draws.
pub fn stein_direction(world: &RepresentationWorld, f: &SafetyFunction, n: usize, seed: u64) -> Result<SteinDirection> {
    ensure_dim(world.dim(), f.dim())?;
    f.validate()?;
    let gradient_check = gradient_check(f, &gradient_check_points(world, derive_seed(seed, 0xfd)))?;
    if n < 2 {
        return Err(Error::TooFew {
            what: "samples",
            required: 2,
            found: n,
        });
    }
    let grads = map_samples(world, n, seed, |h| f.gradient(h));
    let d = world.dim();
    let mut means = Vec::with_capacity(d);
    let mut std_errors = Vec::with_capacity(d);
    for i in 0..d {
        let column: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let est = mean_estimate(&column)?;
        means.push(est.value);
        std_errors.push(est.std_error);
    }
    Ok(SteinDirection {
        v_bar: Direction::new(means)?,
        std_errors,
        gradient_check,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinCheck {
    /// `Cov(f(h), <h, v_c>)`.
    pub lhs: Estimate,
    /// `<Sigma v_c, E grad f>`.
    pub rhs: Estimate,
    pub agree: bool,
    pub gradient_check: f64,
}

impl SteinCheck {
    pub fn residual(&self) -> Estimate {
        self.lhs.minus_independent(&self.rhs)
    }
}

/// Compares both sides of `Cov(f(h), <h, v_c>) = <Sigma v_c, E grad f(h)>`,
/// each estimated from its own `n` draws.
pub fn verify_stein_identity(world: &RepresentationWorld, f: &SafetyFunction, v_c: &Direction, n: usize, seed: u64) -> Result<SteinCheck> {
    ensure_dim(world.dim(), f.dim())?;
    f.validate()?;
    let gradient_check = gradient_check(f, &gradient_check_points(world, derive_seed(seed, 0xfd)))?;
    let (scores, values) = tilt_draws(world, v_c, 1.0, |h| f.value(h), n, derive_seed(seed, 1))?;
    let lhs = covariance_estimate(&values, &scores)?;
    let sigma_vc = world.sigma().apply(v_c)?;
    let sv = sigma_vc.as_slice();
    let projected = map_samples(world, n, derive_seed(seed, 2), |h| {
        let mut g = vec![0.0; h.len()];
        f.gradient_into(h, &mut g);
        g.iter().zip(sv).map(|(a, b)| a * b).sum::<f64>()
    });
    let rhs = mean_estimate(&projected)?;
    let residual = lhs.minus_independent(&rhs);
    Ok(SteinCheck {
        lhs,
        rhs,
        agree: residual.within(0.0, 4.0),
        gradient_check,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonMonotonePoint {
    pub mu: Direction,
    /// `<mu, v>`.
    pub projection: f64,
    /// `-2 (<mu, v> - tau)`, so that `E grad f = coefficient * v`.
    pub coefficient: f64,
    pub sign: i8,
}

/// Mean-gradient coefficient of `f = -(<h, v> - tau)^2` at each base mean:
/// a tilt along `+v` helps exactly when `<mu, v> < tau`.
pub fn non_monotone_probe(world_template: &RepresentationWorld, v: &Direction, tau: f64, mu_grid: &[Direction]) -> Result<Vec<NonMonotonePoint>> {
    if mu_grid.is_empty() {
        return Err(Error::Empty("mean grid"));
    }
    ensure_dim(world_template.dim(), v.dim())?;
    mu_grid
        .iter()
        .map(|mu| {
            ensure_dim(world_template.dim(), mu.dim())?;
            let projection = mu.dot(v)?;
            let coefficient = -2.0 * (projection - tau);
            let sign = if coefficient > 0.0 {
                1
            } else if coefficient < 0.0 {
                -1
            } else {
                0
            };
            Ok(NonMonotonePoint {
                mu: mu.clone(),
                projection,
                coefficient,
                sign,
            })
        })
        .collect()
}

/// Means `mu_0 + t v / |v|^2` for each `t` in `offsets`, giving `<mu, v> = <mu_0, v> + t`.
pub fn means_along(mu_0: &Direction, v: &Direction, projections: &[f64]) -> Result<Vec<Direction>> {
    let vv = v.dot(v)?;
    if vv <= 0.0 {
        return Err(Error::ZeroVector(vv.sqrt()));
    }
    let base = mu_0.dot(v)?;
    projections.iter().map(|&p| mu_0.add_scaled(v, (p - base) / vv)).collect()
}

/// A labelled preference function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyMember {
    pub label: String,
    pub function: SafetyFunction,
}

/// Finite stand-in for the set of preference functions reachable by some constitution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptableFamily {
    members: Vec<FamilyMember>,
}

impl PromptableFamily {
    pub fn new(members: Vec<FamilyMember>) -> Result<Self> {
        let family = Self { members };
        family.validate()?;
        Ok(family)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.members.first().ok_or(Error::Empty("promptable family"))?;
        for m in &self.members {
            ensure_dim(first.function.dim(), m.function.dim())?;
            m.function.validate()?;
        }
        Ok(())
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].function.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptableCeiling {
    pub best_label: String,
    pub best_cov: Estimate,
    /// `std(f) * max_j std(F_j)`.
    pub cauchy_schwarz_bound: f64,
    pub covariances: Vec<(String, Estimate)>,
    /// `best_cov <= bound + 4 std errors`.
    pub within_bound: bool,
}

/// Covariance of `f` with each family member on shared base draws; reports the
/// best member and the Cauchy-Schwarz ceiling.
pub fn promptable_ceiling(world: &RepresentationWorld, f: &SafetyFunction, family: &PromptableFamily, n: usize, seed: u64) -> Result<PromptableCeiling> {
    family.validate()?;
    ensure_dim(world.dim(), f.dim())?;
    ensure_dim(world.dim(), family.dim())?;
    let rows = map_samples(world, n, seed, |h| {
        let mut row = Vec::with_capacity(family.members.len() + 1);
        row.push(f.value(h));
        row.extend(family.members.iter().map(|m| m.function.value(h)));
        row
    });
    let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let target = column(0);
    let target_sd = mc::variance(&target).sqrt();
    let mut covariances = Vec::with_capacity(family.members.len());
    let mut max_sd = 0.0f64;
    for (j, m) in family.members.iter().enumerate() {
        let values = column(j + 1);
        max_sd = max_sd.max(mc::variance(&values).sqrt());
        covariances.push((m.label.clone(), covariance_estimate(&target, &values)?));
    }
    let (best_label, best_cov) = covariances
        .iter()
        .fold(None::<&(String, Estimate)>, |best, c| match best {
            Some(b) if b.1.value >= c.1.value => Some(b),
            _ => Some(c),
        })
        .cloned()
        .expect("family is nonempty");
    let cauchy_schwarz_bound = target_sd * max_sd;
    Ok(PromptableCeiling {
        within_bound: best_cov.value <= cauchy_schwarz_bound + 4.0 * best_cov.std_error,
        best_label,
        best_cov,
        cauchy_schwarz_bound,
        covariances,
    })
}
