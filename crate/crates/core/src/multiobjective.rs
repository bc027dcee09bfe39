//! Several value objectives at once: per-objective improvement, the cone of
//! tilt directions that improve all of them, and the weighted optimum.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linear_model::{alignment_correlation, normalize, Covariance, Direction, MultiValueEncoding};
use crate::mc::{mean_estimate, par_chunks, Estimate};

/// Below this minimum norm the origin is in the convex hull.
pub const EMPTY_TOL: f64 = 1e-8;
/// Above this minimum norm the cone is certified nonempty.
pub const NONEMPTY_TOL: f64 = 1e-4;
/// Slack allowed when verifying a witness, `<d, v_i> >= 1 - WITNESS_SLACK`.
pub const WITNESS_SLACK: f64 = 1e-9;

/// `lambda * V*^T Sigma v_c`, one entry per objective.
pub fn per_objective_deltas(values: &MultiValueEncoding, sigma: Option<&Covariance>, v_c: &Direction, lambda: f64) -> Result<Vec<f64>> {
    values
        .v_stars
        .iter()
        .map(|v| Ok(lambda * alignment_correlation(v, v_c, sigma)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub is_pareto: bool,
    /// Objectives with `<Sigma v_c, v_i*> <= 0`.
    pub violated: Vec<usize>,
}

/// Whether tilting along `v_c` strictly improves every objective; zero counts as a violation.
pub fn pareto_cone_membership(v_stars: &[Direction], sigma: Option<&Covariance>, v_c: &Direction) -> Result<ConeMembership> {
    if v_stars.is_empty() {
        return Err(Error::Empty("value objectives"));
    }
    let mut violated = Vec::new();
    for (i, v) in v_stars.iter().enumerate() {
        if alignment_correlation(v, v_c, sigma)? <= 0.0 {
            violated.push(i);
        }
    }
    Ok(ConeMembership {
        is_pareto: violated.is_empty(),
        violated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeoffClass {
    ParetoImproving,
    TradeoffInducing,
    ParetoDegrading,
    /// Some objective is unchanged to first order.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeoffProfile {
    pub signs: Vec<i8>,
    pub classification: TradeoffClass,
}

pub fn tradeoff_profile(deltas: &[f64]) -> Result<TradeoffProfile> {
    if deltas.is_empty() {
        return Err(Error::Empty("deltas"));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("deltas"));
    }
    let signs: Vec<i8> = deltas
        .iter()
        .map(|&d| if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 })
        .collect();
    let classification = if signs.contains(&0) {
        TradeoffClass::Boundary
    } else if signs.iter().all(|&s| s > 0) {
        TradeoffClass::ParetoImproving
    } else if signs.iter().all(|&s| s < 0) {
        TradeoffClass::ParetoDegrading
    } else {
        TradeoffClass::TradeoffInducing
    };
    Ok(TradeoffProfile { signs, classification })
}

/// Minimum-norm point of a convex hull with its convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormPoint {
    pub point: DVector<f64>,
    pub weights: Vec<f64>,
}

/// Wolfe's minimum-norm-point algorithm over the convex hull of `points`.
pub fn min_norm_point(points: &[DVector<f64>]) -> Result<MinNormPoint> {
    let first = points.first().ok_or(Error::Empty("points"))?;
    for p in points {
        ensure_dim(first.len(), p.len())?;
    }
    let max_sq = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    let tol = 1e-14 * max_sq.max(1.0);
    let combine = |corral: &[usize], lam: &[f64]| -> DVector<f64> {
        let mut x = DVector::zeros(first.len());
        for (&i, &l) in corral.iter().zip(lam) {
            x.axpy(l, &points[i], 1.0);
        }
        x
    };

    let start = (0..points.len())
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .expect("points is nonempty");
    let mut corral = vec![start];
    let mut lam = vec![1.0];
    let mut x = points[start].clone();

    for _ in 0..(100 * points.len() + 100) {
        let xx = x.norm_squared();
        if xx <= tol {
            break;
        }
        let (j, min_dot) = (0..points.len())
            .map(|i| (i, x.dot(&points[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("points is nonempty");
        if xx - min_dot <= tol || corral.contains(&j) {
            break;
        }
        corral.push(j);
        lam.push(0.0);
        loop {
            let mu = affine_minimizer(points, &corral)?;
            if mu.iter().all(|&m| m > 1e-15) {
                lam = mu;
                x = combine(&corral, &lam);
                break;
            }
            let theta = lam
                .iter()
                .zip(&mu)
                .filter(|(_, &m)| m <= 1e-15)
                .map(|(&l, &m)| l / (l - m))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            for (l, m) in lam.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            let mut k = 0;
            let mut removed = false;
            while k < corral.len() {
                if lam[k] <= 1e-15 {
                    corral.remove(k);
                    lam.remove(k);
                    removed = true;
                } else {
                    k += 1;
                }
            }
            if !removed {
                // drop the smallest weight so the minor cycle always shrinks
                let k = (0..lam.len()).min_by(|&a, &b| lam[a].total_cmp(&lam[b])).expect("corral is nonempty");
                corral.remove(k);
                lam.remove(k);
            }
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
        }
    }

    let mut weights = vec![0.0; points.len()];
    for (&i, &l) in corral.iter().zip(&lam) {
        weights[i] += l;
    }
    Ok(MinNormPoint { point: x, weights })
}

/// Weights summing to one that minimize the norm over the affine hull of `corral`.
fn affine_minimizer(points: &[DVector<f64>], corral: &[usize]) -> Result<Vec<f64>> {
    let k = corral.len();
    let mut system = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (a, &i) in corral.iter().enumerate() {
        for (b, &j) in corral.iter().enumerate() {
            system[(a, b)] = points[i].dot(&points[j]);
        }
        system[(a, k)] = 1.0;
        system[(k, a)] = 1.0;
    }
    rhs[k] = 1.0;
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("affinely dependent corral in minimum-norm search".into()))?;
    if solution.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("affinely dependent corral in minimum-norm search".into()));
    }
    Ok(solution.rows(0, k).iter().copied().collect())
}

/// Outcome of the Gordan alternative for `v_1*, ..., v_m*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ConeEmptiness {
    /// `<witness, v_i*> >= 1` for every `i`.
    Nonempty { witness: Direction, min_norm: f64 },
    /// Convex weights with `|sum_i weights_i v_i*| = residual <= 1e-8`.
    Empty { weights: Vec<f64>, residual: f64 },
    /// Neither certificate is numerically clear.
    Degenerate { min_norm: f64 },
}

impl ConeEmptiness {
    pub fn is_empty(&self) -> Option<bool> {
        match self {
            Self::Nonempty { .. } => Some(false),
            Self::Empty { .. } => Some(true),
            Self::Degenerate { .. } => None,
        }
    }
}

/// Decides whether some direction strictly improves every objective.
///
/// Finds the minimum-norm point `x` of the hull of the unit objectives. If the
/// origin is in the hull, its convex weights are the certificate of emptiness;
/// otherwise `<x, v_i*> > 0` for all `i` and `x` rescaled is the witness.
pub fn cone_emptiness(v_stars: &[Direction]) -> Result<ConeEmptiness> {
    let first = v_stars.first().ok_or(Error::Empty("value objectives"))?;
    let mut units = Vec::with_capacity(v_stars.len());
    for v in v_stars {
        ensure_dim(first.dim(), v.dim())?;
        units.push(normalize(v)?.vector().clone());
    }
    let mnp = min_norm_point(&units)?;
    let min_norm = mnp.point.norm();

    if min_norm <= EMPTY_TOL {
        let scaled: Vec<f64> = mnp.weights.iter().zip(v_stars).map(|(w, v)| w / v.norm()).collect();
        let total: f64 = scaled.iter().sum();
        let weights: Vec<f64> = scaled.iter().map(|w| w / total).collect();
        let mut combo = DVector::zeros(first.dim());
        for (w, v) in weights.iter().zip(v_stars) {
            combo.axpy(*w, v.vector(), 1.0);
        }
        let residual = combo.norm();
        return Ok(if residual <= EMPTY_TOL {
            ConeEmptiness::Empty { weights, residual }
        } else {
            ConeEmptiness::Degenerate { min_norm }
        });
    }
    if min_norm < NONEMPTY_TOL {
        return Ok(ConeEmptiness::Degenerate { min_norm });
    }
    let x = Direction::from_vector(mnp.point)?;
    let margin = v_stars.iter().map(|v| x.dot(v)).collect::<Result<Vec<_>>>()?.into_iter().fold(f64::INFINITY, f64::min);
    if margin <= 0.0 {
        return Ok(ConeEmptiness::Degenerate { min_norm });
    }
    let witness = x.scaled(1.0 / margin);
    for v in v_stars {
        if witness.dot(v)? < 1.0 - WITNESS_SLACK {
            return Ok(ConeEmptiness::Degenerate { min_norm });
        }
    }
    Ok(ConeEmptiness::Nonempty { witness, min_norm })
}

/// `pi - angle(v_help, v_harm)`, the angular width of the two-objective cone.
pub fn two_objective_cone_width(v_help: &Direction, v_harm: &Direction) -> Result<f64> {
    Ok((std::f64::consts::PI - v_help.angle_to(v_harm)?).clamp(0.0, std::f64::consts::PI))
}

/// Fraction of uniformly random unit directions (isotropic world) that are
/// Pareto-improving, by rejection sampling.
pub fn pareto_fraction_mc(v_stars: &[Direction], n: usize, seed: u64) -> Result<Estimate> {
    let first = v_stars.first().ok_or(Error::Empty("value objectives"))?;
    let d = first.dim();
    for v in v_stars {
        ensure_dim(d, v.dim())?;
    }
    let hits: Vec<f64> = par_chunks(n, seed, |rng, len| {
        let mut g = vec![0.0; d];
        (0..len)
            .map(|_| {
                g.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
                let inside = v_stars.iter().all(|v| v.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() > 0.0);
                if inside {
                    1.0
                } else {
                    0.0
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    mean_estimate(&hits)
}

fn check_weights(v_stars: &[Direction], alpha: &[f64]) -> Result<()> {
    if v_stars.is_empty() {
        return Err(Error::Empty("value objectives"));
    }
    ensure_dim(v_stars.len(), alpha.len())?;
    if let Some(&bad) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: bad,
            range: "(0, inf)",
        });
    }
    Ok(())
}

/// `sum_i alpha_i v_i*^T Sigma v_c`, the weighted first-order improvement per unit `lambda`.
pub fn weighted_improvement(v_stars: &[Direction], alpha: &[f64], sigma: Option<&Covariance>, v_c: &Direction) -> Result<f64> {
    ensure_dim(v_stars.len(), alpha.len())?;
    v_stars
        .iter()
        .zip(alpha)
        .try_fold(0.0, |acc, (v, a)| Ok(acc + a * alignment_correlation(v, v_c, sigma)?))
}

/// `normalize(Sigma V* alpha)`, the unit constitution maximizing weighted improvement.
pub fn optimal_weighted_constitution(v_stars: &[Direction], alpha: &[f64], sigma: Option<&Covariance>) -> Result<Direction> {
    check_weights(v_stars, alpha)?;
    let d = v_stars[0].dim();
    let mut combo = Direction::zeros(d)?;
    for (v, a) in v_stars.iter().zip(alpha) {
        combo = combo.add_scaled(v, *a)?;
    }
    let resultant = match sigma {
        Some(s) => s.apply(&combo)?,
        None => combo,
    };
    normalize(&resultant).map_err(|_| Error::Degenerate("weighted objectives cancel; no optimal direction".into()))
}

/// `n` uniformly random unit directions in `R^dim`.
pub fn random_unit_directions(dim: usize, n: usize, seed: u64) -> Result<Vec<Direction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = Direction::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())?;
        if g.norm() > 1e-12 {
            out.push(normalize(&g)?);
        }
    }
    Ok(out)
}

/// Brute-force oracle for [`cone_emptiness`] in one to three dimensions:
/// whether some direction on a dense grid of the unit circle or sphere
/// strictly improves every objective. `None` above three dimensions.
///
/// Cones narrower than the grid spacing (about 0.02 rad) can be missed.
pub fn grid_search_nonempty(v_stars: &[Direction]) -> Option<bool> {
    use std::f64::consts::PI;
    let d = v_stars.first()?.dim();
    let inside = |g: &[f64]| v_stars.iter().all(|v| v.as_slice().iter().zip(g).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    match d {
        1 => Some(inside(&[1.0]) || inside(&[-1.0])),
        2 => Some((0..20_000).any(|k| {
            let t = 2.0 * PI * k as f64 / 20_000.0;
            inside(&[t.cos(), t.sin()])
        })),
        3 => {
            let n = 40_000;
            let golden = PI * (3.0 - 5f64.sqrt());
            Some((0..n).any(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * k as f64;
                inside(&[r * t.cos(), r * t.sin(), z])
            }))
        }
        _ => None,
    }
}

/// Per-objective alignments `A_i = <mu + Sigma u, v_i*>` of the policy with score
/// direction `u`, with their weighted sum and minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentProfile {
    pub per_objective: Vec<f64>,
    pub weighted: f64,
    pub worst_case: f64,
}

pub fn alignment_profile(values: &MultiValueEncoding, mu: &Direction, sigma: &Covariance, u: &Direction, alpha: &[f64]) -> Result<AlignmentProfile> {
    check_weights(&values.v_stars, alpha)?;
    let mean = mu.add_scaled(&sigma.apply(u)?, 1.0)?;
    let per_objective = values.v_stars.iter().map(|v| mean.dot(v)).collect::<Result<Vec<_>>>()?;
    Ok(AlignmentProfile {
        weighted: per_objective.iter().zip(alpha).map(|(a, w)| a * w).sum(),
        worst_case: per_objective.iter().copied().fold(f64::INFINITY, f64::min),
        per_objective,
    })
}
