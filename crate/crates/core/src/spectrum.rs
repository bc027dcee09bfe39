//! Covariance spectra (effective dimension, how much of `v*` sits in the top
//! eigenspace) and the construction of adversarial constitutions inside a
//! promptable subspace.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian_world::RepresentationWorld;
use crate::improvement::{verify_improvement, ImprovementReport};
use crate::linear_model::{Covariance, Direction};
use crate::report::Table;

/// Projections shorter than this count as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Participation ratio `(sum lambda)^2 / sum lambda^2`.
pub fn effective_dimension(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::Empty("spectrum"));
    }
    if let Some(&bad) = eigenvalues.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::OutOfRange {
            name: "eigenvalue",
            value: bad,
            range: "[0, inf)",
        });
    }
    let sum: f64 = eigenvalues.iter().sum();
    let sum_sq: f64 = eigenvalues.iter().map(|l| l * l).sum();
    if sum_sq <= 0.0 {
        return Err(Error::Degenerate("all-zero spectrum".into()));
    }
    Ok(sum * sum / sum_sq)
}

/// `sum_{i<=k} <v*, u_i>^2 / |v*|^2` over the top-`k` eigenvectors of `sigma`.
pub fn value_concentration(sigma: &Covariance, v_star: &Direction, k: usize) -> Result<f64> {
    Ok(*concentration_curve(sigma, v_star)?
        .get(k.wrapping_sub(1))
        .ok_or(Error::OutOfRange {
            name: "k",
            value: k as f64,
            range: "[1, d]",
        })?)
}

/// Concentration at every `k = 1..=d`.
fn concentration_curve(sigma: &Covariance, v_star: &Direction) -> Result<Vec<f64>> {
    ensure_dim(sigma.dim(), v_star.dim())?;
    let norm_sq = v_star.vector().norm_squared();
    if norm_sq.sqrt() <= DEGENERATE_NORM {
        return Err(Error::ZeroVector(norm_sq.sqrt()));
    }
    let coords = sigma.eigenvectors().transpose() * v_star.vector();
    let mut acc = 0.0;
    Ok(coords
        .iter()
        .map(|c| {
            acc += c * c;
            acc / norm_sq
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub d_eff: f64,
    /// `(k, concentration at k)` for `k = 1..=d`.
    pub concentration_curve: Vec<(usize, f64)>,
}

impl SpectrumReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new("concentration", &["k", "concentration"]);
        t.rows = self.concentration_curve.iter().map(|&(k, c)| vec![k as f64, c]).collect();
        t
    }
}

pub fn spectrum_report(sigma: &Covariance, v_star: &Direction) -> Result<SpectrumReport> {
    let curve = concentration_curve(sigma, v_star)?;
    Ok(SpectrumReport {
        eigenvalues: sigma.eigenvalues().to_vec(),
        d_eff: effective_dimension(sigma.eigenvalues())?,
        concentration_curve: curve.into_iter().enumerate().map(|(i, c)| (i + 1, c)).collect(),
    })
}

/// A world whose covariance has the given spectrum on the standard basis and
/// whose `v*` is the supplied direction (typically inside the top eigenvectors).
pub fn low_rank_world(spectrum: &[f64], v_star: Direction, sigma_eps: f64) -> Result<RepresentationWorld> {
    ensure_dim(spectrum.len(), v_star.dim())?;
    let sigma = Covariance::diagonal(spectrum)?;
    RepresentationWorld::new(Direction::zeros(spectrum.len())?, sigma, crate::linear_model::ValueEncoding::new(v_star, sigma_eps)?)
}

/// Orthonormal rows spanning the directions a constitution can activate.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptableSubspace {
    basis: DMatrix<f64>,
}

impl PromptableSubspace {
    /// Orthonormalizes `spanning` by modified Gram-Schmidt, dropping dependent vectors.
    pub fn new(spanning: &[Direction]) -> Result<Self> {
        let first = spanning.first().ok_or(Error::Empty("promptable subspace"))?;
        let d = first.dim();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for v in spanning {
            ensure_dim(d, v.dim())?;
            let scale = v.norm();
            let mut r = v.vector().clone();
            for _ in 0..2 {
                for q in &rows {
                    let c = q.dot(&r);
                    r.axpy(-c, q, 1.0);
                }
            }
            let n = r.norm();
            if n > 1e-10 * scale.max(1.0) {
                rows.push(r / n);
            }
        }
        if rows.is_empty() {
            return Err(Error::Degenerate("spanning set is all zero".into()));
        }
        let basis = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Ok(Self { basis })
    }

    /// All of `R^d`.
    pub fn full(dim: usize) -> Result<Self> {
        (0..dim).map(|i| Direction::basis(dim, i)).collect::<Result<Vec<_>>>().and_then(|b| Self::new(&b))
    }

    /// `k x d`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, v: &Direction) -> Result<Direction> {
        ensure_dim(self.dim(), v.dim())?;
        Direction::from_vector(self.basis.transpose() * (&self.basis * v.vector()))
    }

    /// Largest `|B B^T - I|` entry.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = &self.basis * self.basis.transpose();
        (gram - DMatrix::identity(self.rank(), self.rank())).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdversarialSearch {
    /// `v_adv` minimizes `v*^T Sigma v_c` over unit directions in the subspace.
    Found { v_adv: Direction, predicted_delta: f64 },
    /// The subspace is orthogonal to `Sigma v*`; every member leaves alignment unchanged.
    NoAdversary { projection_norm: f64 },
}

/// `-P(Sigma v*) / |P(Sigma v*)|`, with `predicted_delta = v*^T Sigma v_adv` (unit `lambda`).
pub fn find_adversarial_direction(subspace: &PromptableSubspace, world: &RepresentationWorld) -> Result<AdversarialSearch> {
    ensure_dim(world.dim(), subspace.dim())?;
    let target = world.sigma().apply(world.v_star())?;
    let projected = subspace.project(&target)?;
    let projection_norm = projected.norm();
    if projection_norm <= DEGENERATE_NORM {
        return Ok(AdversarialSearch::NoAdversary { projection_norm });
    }
    let v_adv = projected.scaled(-1.0 / projection_norm);
    let predicted_delta = world.sigma().bilinear(world.v_star(), &v_adv)?;
    if predicted_delta >= 0.0 {
        return Ok(AdversarialSearch::NoAdversary { projection_norm });
    }
    Ok(AdversarialSearch::Found { v_adv, predicted_delta })
}

/// [`verify_improvement`] along an adversarial direction.
pub fn demonstrate_degradation(world: &RepresentationWorld, v_adv: &Direction, lambda: f64, n: usize, seed: u64) -> Result<ImprovementReport> {
    verify_improvement(world, v_adv, lambda, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_world::random_world;
    use crate::linear_model::ValueEncoding;
    use crate::multiobjective::random_unit_directions;
    use proptest::prelude::*;

    fn dir(c: &[f64]) -> Direction {
        Direction::new(c.to_vec()).unwrap()
    }

    #[test]
    fn effective_dimension_examples() {
        assert!((effective_dimension(&[1.0; 7]).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(effective_dimension(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((effective_dimension(&[2.0, 1.0, 1.0]).unwrap() - 16.0 / 6.0).abs() < 1e-12);
        assert!(effective_dimension(&[0.0, 0.0]).is_err());
        assert!(effective_dimension(&[]).is_err());
        assert!(effective_dimension(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn concentration_examples() {
        let sigma = Covariance::from_spectrum(&[4.0, 2.0, 1.0], 3).unwrap();
        let top = Direction::from_vector(sigma.eigenvectors().column(0).into_owned()).unwrap();
        assert!((value_concentration(&sigma, &top, 1).unwrap() - 1.0).abs() < 1e-12);
        let bottom = Direction::from_vector(sigma.eigenvectors().column(2).into_owned()).unwrap();
        assert!(value_concentration(&sigma, &bottom, 2).unwrap() < 1e-12);
        assert!(value_concentration(&sigma, &top, 0).is_err());
        assert!(value_concentration(&sigma, &top, 4).is_err());
        assert!(value_concentration(&sigma, &dir(&[0.0, 0.0, 0.0]), 1).is_err());
    }

    #[test]
    fn low_rank_world_concentrates() {
        let mut spectrum = vec![0.1; 20];
        spectrum[0] = 10.0;
        spectrum[1] = 5.0;
        let mut v = vec![0.0; 20];
        v[0] = 0.6;
        v[1] = -0.8;
        let world = low_rank_world(&spectrum, dir(&v), 0.1).unwrap();
        let report = spectrum_report(world.sigma(), world.v_star()).unwrap();
        assert!(report.concentration_curve[1].1 >= 0.999);
        assert!(report.d_eff < 3.0);
        assert_eq!(report.table().rows.len(), 20);
    }

    #[test]
    fn subspace_is_orthonormal() {
        let s = PromptableSubspace::new(&[dir(&[1.0, 1.0, 0.0]), dir(&[2.0, 2.0, 0.0]), dir(&[1.0, 0.0, 1.0])]).unwrap();
        assert_eq!(s.rank(), 2);
        assert!(s.orthonormality_error() < 1e-10);
        assert!(PromptableSubspace::new(&[dir(&[0.0, 0.0])]).is_err());
        assert!(PromptableSubspace::new(&[]).is_err());
    }

    #[test]
    fn adversary_examples() {
        let toy = RepresentationWorld::isotropic(ValueEncoding::new(dir(&[1.0, 0.0]), 0.5).unwrap()).unwrap();
        match find_adversarial_direction(&PromptableSubspace::full(2).unwrap(), &toy).unwrap() {
            AdversarialSearch::Found { v_adv, predicted_delta } => {
                assert!((v_adv.as_slice()[0] + 1.0).abs() < 1e-12 && v_adv.as_slice()[1].abs() < 1e-12);
                assert!((predicted_delta + 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        match find_adversarial_direction(&PromptableSubspace::new(&[dir(&[-0.8, 0.6])]).unwrap(), &toy).unwrap() {
            AdversarialSearch::Found { v_adv, predicted_delta } => {
                assert!((v_adv.dot(toy.v_star()).unwrap() + 0.8).abs() < 1e-12);
                assert!((v_adv.as_slice()[1] - 0.6).abs() < 1e-12);
                assert!((predicted_delta + 0.8).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            find_adversarial_direction(&PromptableSubspace::new(&[dir(&[0.0, 1.0])]).unwrap(), &toy).unwrap(),
            AdversarialSearch::NoAdversary { .. }
        ));
    }

    #[test]
    fn adversary_beats_random_subspace_directions() {
        let world = random_world(5, 3).unwrap();
        let sub = PromptableSubspace::new(&random_unit_directions(5, 3, 4).unwrap()).unwrap();
        let AdversarialSearch::Found { v_adv, predicted_delta } = find_adversarial_direction(&sub, &world).unwrap() else {
            panic!("expected an adversary");
        };
        for g in random_unit_directions(3, 10_000, 5).unwrap() {
            let v = Direction::from_vector(sub.basis().transpose() * g.vector()).unwrap();
            let value = world.sigma().bilinear(world.v_star(), &v).unwrap();
            assert!(predicted_delta <= value + 1e-9);
        }
        assert!((v_adv.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degradation_in_the_toy_world() {
        let toy = RepresentationWorld::isotropic(ValueEncoding::new(dir(&[1.0, 0.0]), 0.5).unwrap()).unwrap();
        let r = demonstrate_degradation(&toy, &dir(&[-0.8, 0.6]), 1.0, 100_000, 1).unwrap();
        assert!(r.mc_estimate().within(-0.8, 4.0));
        assert!(r.significant && r.mc_delta < 0.0);
        let zero = demonstrate_degradation(&toy, &dir(&[-0.8, 0.6]), 0.0, 10_000, 1).unwrap();
        assert_eq!(zero.exact_delta, 0.0);
    }

    proptest! {
        #[test]
        fn parseval_and_bounds(seed in 0u64..1000, d in 1usize..8) {
            let world = random_world(d, seed).unwrap();
            let report = spectrum_report(world.sigma(), world.v_star()).unwrap();
            let last = report.concentration_curve.last().unwrap().1;
            prop_assert!((last - 1.0).abs() < 1e-8);
            prop_assert!(report.concentration_curve.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-15));
            prop_assert!(report.d_eff >= 1.0 - 1e-12 && report.d_eff <= d as f64 + 1e-12);
        }
    }
}
