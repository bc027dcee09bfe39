//! Synthetic constitutional preferences and their Bradley-Terry fit.
//!
//! A judge with direction `v_c` prefers `h1` over `h2` with probability
//! `sigmoid(<h1 - h2, v_c>)`. Fitting a logistic model on the differences
//! recovers `v_c` up to sampling error, which closes the loop from judgments
//! back to the direction that RLAIF tilts the policy along.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian_world::{tilt_policy, Policy, RepresentationWorld};
use crate::linear_model::{normalize, Constitution, Direction};
use crate::mc::{self, RepresentationSampler};

/// Parameter norm beyond which the data are treated as perfectly separated.
pub const SEPARATION_NORM: f64 = 1e3;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// `true` when `h1` is preferred.
    pub label: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Unit-norm maximizer of the log-likelihood.
    pub recovered_direction: Direction,
    /// Norm of the maximizer.
    pub scale: f64,
    /// Mean log-likelihood per pair at the returned parameter.
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// No finite maximizer: the parameter norm passed [`SEPARATION_NORM`] or the
    /// final parameter separates the data. The scale is unidentifiable.
    pub separated: bool,
}

impl FitReport {
    /// `scale * recovered_direction`.
    pub fn parameter(&self) -> Direction {
        self.recovered_direction.scaled(self.scale)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Probability that the judge prefers `h1` over `h2`.
pub fn preference_probability(h1: &[f64], h2: &[f64], v_c: &Direction) -> Result<f64> {
    ensure_dim(v_c.dim(), h1.len())?;
    ensure_dim(v_c.dim(), h2.len())?;
    let margin: f64 = h1.iter().zip(h2).zip(v_c.as_slice()).map(|((a, b), v)| (a - b) * v).sum();
    Ok(sigmoid(margin))
}

/// Labels fixed representation pairs with Bernoulli judgments from `judge`.
pub fn label_pairs(pairs: &[(Vec<f64>, Vec<f64>)], judge: &Constitution, seed: u64) -> Result<Vec<PreferencePair>> {
    for (h1, h2) in pairs {
        ensure_dim(judge.v_c.dim(), h1.len())?;
        ensure_dim(judge.v_c.dim(), h2.len())?;
    }
    let labelled = mc::par_chunks(pairs.len(), seed, |rng, len| (0..len).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
    Ok(pairs
        .iter()
        .zip(labelled.into_iter().flatten())
        .map(|((h1, h2), u)| {
            let p = preference_probability(h1, h2, &judge.v_c).expect("checked above");
            PreferencePair {
                h1: h1.clone(),
                h2: h2.clone(),
                label: u < p,
                seed,
            }
        })
        .collect())
}

/// Draws `n_pairs` i.i.d. pairs from the world's base policy and labels them.
pub fn generate_preferences(world: &RepresentationWorld, judge: &Constitution, n_pairs: usize, seed: u64) -> Result<Vec<PreferencePair>> {
    generate_preferences_from_policy(&world.base_policy(), judge, n_pairs, seed)
}

/// As [`generate_preferences`], with candidates drawn from an arbitrary policy.
pub fn generate_preferences_from_policy(policy: &Policy<'_>, judge: &Constitution, n_pairs: usize, seed: u64) -> Result<Vec<PreferencePair>> {
    if n_pairs == 0 {
        return Err(Error::TooFew {
            what: "preference pairs",
            required: 1,
            found: 0,
        });
    }
    let world = policy.world();
    ensure_dim(world.dim(), judge.v_c.dim())?;
    let (mean, _) = crate::gaussian_world::tilted_gaussian_moments(world, policy.score_direction())?;
    let sampler = crate::mc::GaussianSampler::new(mean.vector().clone(), world.sigma().factor().clone())?;
    let d = world.dim();
    let v_c = &judge.v_c;
    let chunks = mc::par_chunks(n_pairs, seed, |rng, len| {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let mut h1 = vec![0.0; d];
            let mut h2 = vec![0.0; d];
            sampler.draw(rng, &mut h1);
            sampler.draw(rng, &mut h2);
            let p = preference_probability(&h1, &h2, v_c).expect("dims checked");
            let label = rng.random::<f64>() < p;
            out.push(PreferencePair { h1, h2, label, seed });
        }
        out
    });
    Ok(chunks.into_iter().flatten().collect())
}

struct Design {
    features: DMatrix<f64>,
    labels: Vec<f64>,
}

impl Design {
    fn mean_log_likelihood(&self, theta: &DVector<f64>) -> f64 {
        let margins = &self.features * theta;
        let total: f64 = margins
            .iter()
            .zip(&self.labels)
            .map(|(z, y)| -(y * softplus(-z) + (1.0 - y) * softplus(*z)))
            .sum();
        total / self.labels.len() as f64
    }

    fn strictly_separates(&self, theta: &DVector<f64>) -> bool {
        let margins = &self.features * theta;
        margins.iter().zip(&self.labels).all(|(z, y)| if *y > 0.5 { *z > 0.0 } else { *z < 0.0 })
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let margins = &self.features * theta;
        let residuals = DVector::from_iterator(margins.len(), margins.iter().zip(&self.labels).map(|(z, y)| y - sigmoid(*z)));
        self.features.tr_mul(&residuals) / self.labels.len() as f64
    }
}

/// Maximizes the mean logistic log-likelihood of the labels given `h1 - h2`.
///
/// Full-batch gradient ascent from zero with Armijo backtracking. Stops when
/// the gradient norm drops to `tol` (converged), when the parameter norm
/// passes [`SEPARATION_NORM`] (separated), or after `max_iters` steps. A final
/// parameter that classifies every pair correctly is also reported as
/// separated: the direction is meaningful but the scale is not.
pub fn fit_preference_direction(pairs: &[PreferencePair], max_iters: usize, tol: f64) -> Result<FitReport> {
    let first = pairs.first().ok_or(Error::Empty("preference pairs"))?;
    let d = first.h1.len();
    if pairs.len() < d + 1 {
        return Err(Error::TooFew {
            what: "preference pairs",
            required: d + 1,
            found: pairs.len(),
        });
    }
    let mut rows = Vec::with_capacity(pairs.len() * d);
    for p in pairs {
        ensure_dim(d, p.h1.len())?;
        ensure_dim(d, p.h2.len())?;
        rows.extend(p.h1.iter().zip(&p.h2).map(|(a, b)| a - b));
    }
    let features = DMatrix::from_row_slice(pairs.len(), d, &rows);
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("preference features"));
    }
    let gram = features.tr_mul(&features);
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let top = eig.iter().copied().fold(0.0_f64, f64::max);
    let rank = eig.iter().filter(|&&l| l > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
    if rank < d {
        return Err(Error::RankDeficient { rank, dim: d });
    }
    let design = Design {
        features,
        labels: pairs.iter().map(|p| if p.label { 1.0 } else { 0.0 }).collect(),
    };

    let mut theta = DVector::zeros(d);
    let mut ll = design.mean_log_likelihood(&theta);
    let mut grad = design.gradient(&theta);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = grad.norm() <= tol;
    let mut separated = false;
    while !converged && iterations < max_iters {
        iterations += 1;
        let g2 = grad.norm_squared();
        step *= 2.0;
        let (next, next_ll) = loop {
            let candidate = &theta + &grad * step;
            let cand_ll = design.mean_log_likelihood(&candidate);
            if cand_ll >= ll + ARMIJO_C * step * g2 || step < 1e-16 {
                break (candidate, cand_ll);
            }
            step *= BACKTRACK;
        };
        theta = next;
        ll = next_ll;
        grad = design.gradient(&theta);
        if theta.norm() > SEPARATION_NORM {
            separated = true;
            break;
        }
        converged = grad.norm() <= tol;
    }
    // A strictly separating parameter means the likelihood has no finite
    // maximizer, even if the gradient has already decayed below `tol`.
    if !separated && theta.norm() > 0.0 && design.strictly_separates(&theta) {
        separated = true;
        converged = false;
    }

    let scale = theta.norm();
    let recovered_direction = if scale > 0.0 {
        normalize(&Direction::from_vector(theta)?)?
    } else {
        // Zero maximizer: no preferred direction; report e_0 with zero scale.
        Direction::basis(d, 0)?
    };
    Ok(FitReport {
        recovered_direction,
        scale,
        log_likelihood: ll,
        gradient_norm: grad.norm(),
        iterations,
        converged,
        separated,
    })
}

/// One round of synthetic RLAIF: judge pairs from `base`, fit the judgment
/// direction, then tilt `base` by `lambda` along the fitted parameter.
pub fn rlaif_round<'w>(
    world: &'w RepresentationWorld,
    base: &Policy<'w>,
    judge: &Constitution,
    n_pairs: usize,
    lambda: f64,
    seed: u64,
) -> Result<(Policy<'w>, FitReport)> {
    ensure_dim(world.dim(), base.world().dim())?;
    let pairs = generate_preferences_from_policy(base, judge, n_pairs, seed)?;
    let fit = fit_preference_direction(&pairs, 1000, 1e-6)?;
    let policy = tilt_policy(base, &fit.parameter(), lambda)?;
    Ok((policy, fit))
}

/// The infinite-data limit of [`rlaif_round`]: tilt along the judge's own direction.
pub fn rlaif_round_exact<'w>(base: &Policy<'w>, judge: &Constitution, lambda: f64) -> Result<Policy<'w>> {
    tilt_policy(base, &judge.v_c, lambda)
}

/// Writes pairs as CSV: `h1_0..h1_{d-1}, h2_0..h2_{d-1}, label, seed`.
///
/// Floats use Rust's shortest round-trip formatting, so a dataset read back
/// with [`read_preferences`] is bit-identical.
pub fn write_preferences<W: Write>(pairs: &[PreferencePair], mut out: W) -> Result<()> {
    let d = pairs.first().map(|p| p.h1.len()).ok_or(Error::Empty("preference pairs"))?;
    let mut header: Vec<String> = (0..d).map(|i| format!("h1_{i}")).collect();
    header.extend((0..d).map(|i| format!("h2_{i}")));
    header.push("label".into());
    header.push("seed".into());
    writeln!(out, "{}", header.join(","))?;
    for p in pairs {
        ensure_dim(d, p.h1.len())?;
        ensure_dim(d, p.h2.len())?;
        let mut fields: Vec<String> = p.h1.iter().chain(&p.h2).map(|x| x.to_string()).collect();
        fields.push(u8::from(p.label).to_string());
        fields.push(p.seed.to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_preferences<R: BufRead>(input: R) -> Result<Vec<PreferencePair>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(Error::Parse("missing header".into()))??;
    let columns = header.split(',').count();
    if columns < 4 || columns % 2 != 0 {
        return Err(Error::Parse(format!("bad header with {columns} columns")));
    }
    let d = (columns - 2) / 2;
    let mut pairs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Parse(format!("record {}: expected {columns} fields, found {}", lineno + 1, fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("record {}: {e}", lineno + 1)));
        let h1 = fields[..d].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let h2 = fields[d..2 * d].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let label = match fields[2 * d].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("record {}: label {other:?}", lineno + 1))),
        };
        let seed = fields[2 * d + 1]
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("record {}: {e}", lineno + 1)))?;
        pairs.push(PreferencePair { h1, h2, label, seed });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_world::estimate_alignment;
    use crate::linear_model::ValueEncoding;

    fn dir(c: &[f64]) -> Direction {
        Direction::new(c.to_vec()).unwrap()
    }

    fn toy_world() -> RepresentationWorld {
        RepresentationWorld::isotropic(ValueEncoding::new(dir(&[1.0, 0.0]), 0.5).unwrap()).unwrap()
    }

    fn judge() -> Constitution {
        Constitution::new("harmless", dir(&[0.95, 0.31]))
    }

    #[test]
    fn orthogonal_difference_is_a_coin_flip() {
        let p = preference_probability(&[0.3, 1.0], &[0.3, -2.0], &dir(&[1.0, 0.0])).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn label_frequency_matches_sigmoid() {
        let expected = sigmoid(0.95);
        assert!((expected - 0.721).abs() < 5e-4);
        let fixed = vec![(vec![1.0, 0.0], vec![0.0, 0.0]); 100_000];
        let pairs = label_pairs(&fixed, &judge(), 13).unwrap();
        let freq = pairs.iter().filter(|p| p.label).count() as f64 / pairs.len() as f64;
        assert!((freq - expected).abs() < 0.01, "{freq}");
    }

    #[test]
    fn large_judge_norm_saturates() {
        let strong = Constitution::new("strong", dir(&[950.0, 310.0]));
        let pairs = generate_preferences(&toy_world(), &strong, 2_000, 3).unwrap();
        let agree = pairs
            .iter()
            .filter(|p| {
                let m: f64 = p.h1.iter().zip(&p.h2).zip(strong.v_c.as_slice()).map(|((a, b), v)| (a - b) * v).sum();
                (m > 0.0) == p.label
            })
            .count();
        assert!(agree >= 1_995, "{agree}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_preferences(&toy_world(), &judge(), 1_000, 8).unwrap();
        let b = generate_preferences(&toy_world(), &judge(), 1_000, 8).unwrap();
        assert_eq!(a, b);
        assert!(generate_preferences(&toy_world(), &Constitution::new("x", dir(&[1.0])), 10, 1).is_err());
    }

    #[test]
    fn recovers_judge_direction() {
        let pairs = generate_preferences(&toy_world(), &judge(), 100_000, 21).unwrap();
        let fit = fit_preference_direction(&pairs, 1000, 1e-6).unwrap();
        assert!(fit.converged && !fit.separated);
        assert!(fit.gradient_norm <= 1e-6);
        let truth = normalize(&judge().v_c).unwrap();
        let angle = fit.recovered_direction.angle_to(&truth).unwrap().to_degrees();
        assert!(angle < 2.0, "angle {angle}");

        let flipped: Vec<PreferencePair> = pairs.iter().map(|p| PreferencePair { label: !p.label, ..p.clone() }).collect();
        let back = fit_preference_direction(&flipped, 1000, 1e-6).unwrap();
        let angle = back.recovered_direction.angle_to(&truth.scaled(-1.0)).unwrap().to_degrees();
        assert!(angle < 2.0, "angle {angle}");
    }

    #[test]
    fn null_labels_give_small_scale() {
        let world = toy_world();
        let null = Constitution::new("null", dir(&[0.0, 0.0]));
        let pairs = generate_preferences(&world, &null, 100_000, 4).unwrap();
        let fit = fit_preference_direction(&pairs, 1000, 1e-6).unwrap();
        assert!(fit.scale <= 0.1, "{}", fit.scale);
    }

    #[test]
    fn swap_and_flip_is_invariant() {
        let pairs = generate_preferences(&toy_world(), &judge(), 5_000, 2).unwrap();
        let swapped: Vec<PreferencePair> = pairs
            .iter()
            .map(|p| PreferencePair {
                h1: p.h2.clone(),
                h2: p.h1.clone(),
                label: !p.label,
                seed: p.seed,
            })
            .collect();
        let a = fit_preference_direction(&pairs, 1000, 1e-6).unwrap();
        let b = fit_preference_direction(&swapped, 1000, 1e-6).unwrap();
        for (x, y) in a.recovered_direction.as_slice().iter().zip(b.recovered_direction.as_slice()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn separation_is_reported() {
        // Labels follow the sign of the first feature exactly.
        let raw: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
            .map(|i| {
                let x = (i as f64 - 99.5) / 10.0;
                (vec![x, (i as f64).sin()], vec![0.0, 0.0])
            })
            .collect();
        let pairs: Vec<PreferencePair> = raw
            .into_iter()
            .map(|(h1, h2)| PreferencePair {
                label: h1[0] > 0.0,
                h1,
                h2,
                seed: 0,
            })
            .collect();
        let fit = fit_preference_direction(&pairs, 100_000, 1e-6).unwrap();
        assert!(fit.separated && !fit.converged);
        assert!(fit.recovered_direction.as_slice()[0] > 0.99);
    }

    #[test]
    fn rank_deficiency_and_size_errors() {
        let pairs: Vec<PreferencePair> = (0..10)
            .map(|i| PreferencePair {
                h1: vec![i as f64, 0.0],
                h2: vec![0.0, 0.0],
                label: i % 2 == 0,
                seed: 0,
            })
            .collect();
        assert!(matches!(fit_preference_direction(&pairs, 100, 1e-6), Err(Error::RankDeficient { .. })));
        assert!(matches!(fit_preference_direction(&pairs[..2], 100, 1e-6), Err(Error::TooFew { .. })));
    }

    #[test]
    fn exact_round_matches_toy_arithmetic() {
        let world = toy_world();
        let base = Policy::new(&world, dir(&[0.1, 0.995])).unwrap();
        let next = rlaif_round_exact(&base, &judge(), 1.0).unwrap();
        let u = next.score_direction().as_slice();
        assert!((u[0] - 1.05).abs() < 1e-12 && (u[1] - 1.305).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_round_keeps_base() {
        let world = toy_world();
        let base = Policy::new(&world, dir(&[0.1, 0.995])).unwrap();
        let (next, _) = rlaif_round(&world, &base, &judge(), 2_000, 0.0, 5).unwrap();
        assert_eq!(next.score_direction(), base.score_direction());
    }

    #[test]
    fn fitted_round_reaches_exact_gain() {
        let world = toy_world();
        let base = world.base_policy();
        let (fitted, _) = rlaif_round(&world, &base, &judge(), 100_000, 1.0, 77).unwrap();
        let exact = rlaif_round_exact(&base, &judge(), 1.0).unwrap();
        let base_align = base.exact_alignment();
        let fitted_gain = fitted.exact_alignment() - base_align;
        let exact_gain = exact.exact_alignment() - base_align;
        assert!((fitted_gain - exact_gain).abs() <= 0.1 * exact_gain, "{fitted_gain} vs {exact_gain}");
        let mc = estimate_alignment(&fitted, 50_000, 1).unwrap();
        assert!(mc.within(fitted.exact_alignment(), 4.0));
    }

    #[test]
    fn csv_round_trip() {
        let pairs = generate_preferences(&toy_world(), &judge(), 50, 6).unwrap();
        let mut buf = Vec::new();
        write_preferences(&pairs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("h1_0,h1_1,h2_0,h2_1,label,seed\n"));
        let back = read_preferences(buf.as_slice()).unwrap();
        assert_eq!(back, pairs);
        assert!(read_preferences("h1_0,h2_0,label,seed\n1,2,3,4\n".as_bytes()).is_err());
    }
}
