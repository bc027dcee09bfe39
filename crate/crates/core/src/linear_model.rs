//! Core geometric types of the linear value model.
//!
//! Representations live in `R^d`. True safety is `S = <h, v*> + eps`, the base
//! policy scores responses along a generation direction `w`, and a constitution
//! activates a judgment direction `v_c`. Everything here is a plain value type;
//! the Monte Carlo machinery lives in [`crate::gaussian_world`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Minimum norm accepted by [`normalize`].
pub const MIN_NORM: f64 = 1e-12;
/// Absolute tolerance on `|A_ij - A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL, 0)` are clipped to zero; anything lower is rejected.
pub const PSD_TOL: f64 = 1e-10;

/// A vector in representation space. Not necessarily unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Direction(DVector<f64>);

impl Direction {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("direction"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("direction"));
        }
        Ok(Self(DVector::from_vec(components)))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        Self::new(v.data.into())
    }

    /// Standard basis vector `e_index` in `R^dim`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index + 1,
            });
        }
        let mut c = vec![0.0; dim];
        c[index] = 1.0;
        Self::new(c)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, other: &Direction) -> Result<f64> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(self.0.dot(&other.0))
    }

    pub fn scaled(&self, factor: f64) -> Direction {
        Direction(&self.0 * factor)
    }

    /// `self + factor * other`, componentwise.
    pub fn add_scaled(&self, other: &Direction, factor: f64) -> Result<Direction> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(Direction(&self.0 + &other.0 * factor))
    }

    /// Angle to `other` in radians, in `[0, pi]`.
    pub fn angle_to(&self, other: &Direction) -> Result<f64> {
        let denom = self.norm() * other.norm();
        if denom < MIN_NORM {
            return Err(Error::ZeroVector(denom));
        }
        Ok((self.dot(other)? / denom).clamp(-1.0, 1.0).acos())
    }
}

impl TryFrom<Vec<f64>> for Direction {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Direction::new(v)
    }
}

impl From<Direction> for Vec<f64> {
    fn from(d: Direction) -> Self {
        d.0.data.into()
    }
}

/// Returns `v / |v|`.
pub fn normalize(v: &Direction) -> Result<Direction> {
    let n = v.norm();
    if n <= MIN_NORM {
        return Err(Error::ZeroVector(n));
    }
    Ok(v.scaled(1.0 / n))
}

/// A symmetric positive semidefinite covariance, validated on construction.
///
/// Holds the descending eigendecomposition and a symmetric factor `L` with
/// `L L^T = Sigma` (eigenvalues in `[-1e-10, 0)` clipped to zero), which the
/// samplers use to draw from `N(mu, Sigma)`.
#[derive(Debug, Clone)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl PartialEq for Covariance {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl Covariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::Empty("covariance"));
        }
        ensure_dim(matrix.nrows(), matrix.ncols())?;
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("covariance"));
        }
        let asym = matrix.iter().zip(matrix.transpose().iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        // Stable sort keeps the decomposition's own order inside tied blocks.
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let min = order.last().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::NotPsd(min));
        }
        let d = matrix.nrows();
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let eigenvectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        let mut factor = eigenvectors.clone();
        for (c, lam) in eigenvalues.iter().enumerate() {
            factor.column_mut(c).scale_mut(lam.sqrt());
        }
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            factor,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn from_row_major(dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    /// `U diag(eigenvalues) U^T` with `U` a Haar-random orthogonal basis drawn from `seed`.
    pub fn from_spectrum(eigenvalues: &[f64], seed: u64) -> Result<Self> {
        let basis = random_orthogonal(eigenvalues.len(), seed)?;
        Self::from_spectrum_and_basis(eigenvalues, &basis)
    }

    /// `U diag(eigenvalues) U^T` for a given orthogonal `U` (columns are eigenvectors).
    pub fn from_spectrum_and_basis(eigenvalues: &[f64], basis: &DMatrix<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        ensure_dim(d, basis.nrows())?;
        ensure_dim(d, basis.ncols())?;
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
        let m = basis * lam * basis.transpose();
        Self::new((&m + m.transpose()) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues in descending order (tiny negatives clipped to zero).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn apply(&self, v: &Direction) -> Result<Direction> {
        ensure_dim(self.dim(), v.dim())?;
        Ok(Direction(&self.matrix * v.vector()))
    }

    /// `a^T Sigma b`.
    pub fn bilinear(&self, a: &Direction, b: &Direction) -> Result<f64> {
        ensure_dim(self.dim(), a.dim())?;
        ensure_dim(self.dim(), b.dim())?;
        Ok(a.vector().dot(&(&self.matrix * b.vector())))
    }
}

/// Haar-random orthogonal matrix via QR of a Gaussian matrix with sign correction.
pub fn random_orthogonal(dim: usize, seed: u64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::Empty("basis"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    Ok(q)
}

/// `v* ` together with the noise level of the safety score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEncoding {
    pub v_star: Direction,
    pub sigma_eps: f64,
}

impl ValueEncoding {
    pub fn new(v_star: Direction, sigma_eps: f64) -> Result<Self> {
        if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
            return Err(Error::OutOfRange {
                name: "sigma_eps",
                value: sigma_eps,
                range: "[0, inf)",
            });
        }
        Ok(Self { v_star, sigma_eps })
    }

    pub fn dim(&self) -> usize {
        self.v_star.dim()
    }

    /// Standard deviation of `S = <h, v*> + eps` under covariance `sigma`.
    pub fn sigma_s(&self, sigma: Option<&Covariance>) -> Result<f64> {
        Ok((proxy_variance(&self.v_star, sigma)? + self.sigma_eps.powi(2)).sqrt())
    }
}

/// Several value objectives `v_1*, ..., v_m*` sharing one representation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiValueEncoding {
    pub v_stars: Vec<Direction>,
    pub sigma_eps_list: Vec<f64>,
}

impl MultiValueEncoding {
    pub fn new(v_stars: Vec<Direction>, sigma_eps_list: Vec<f64>) -> Result<Self> {
        let first = v_stars.first().ok_or(Error::Empty("value objectives"))?;
        let d = first.dim();
        for v in &v_stars {
            ensure_dim(d, v.dim())?;
        }
        ensure_dim(v_stars.len(), sigma_eps_list.len())?;
        if let Some(&bad) = sigma_eps_list.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::OutOfRange {
                name: "sigma_eps",
                value: bad,
                range: "[0, inf)",
            });
        }
        Ok(Self {
            v_stars,
            sigma_eps_list,
        })
    }

    /// Noise-free objectives.
    pub fn noiseless(v_stars: Vec<Direction>) -> Result<Self> {
        let m = v_stars.len();
        Self::new(v_stars, vec![0.0; m])
    }

    pub fn dim(&self) -> usize {
        self.v_stars[0].dim()
    }

    pub fn len(&self) -> usize {
        self.v_stars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_stars.is_empty()
    }

    /// Objective `i` as a single-value encoding.
    pub fn objective(&self, i: usize) -> Option<ValueEncoding> {
        Some(ValueEncoding {
            v_star: self.v_stars.get(i)?.clone(),
            sigma_eps: self.sigma_eps_list[i],
        })
    }
}

/// A constitution, represented only by the direction it activates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constitution {
    pub label: String,
    pub v_c: Direction,
}

impl Constitution {
    pub fn new(label: impl Into<String>, v_c: Direction) -> Self {
        Self {
            label: label.into(),
            v_c,
        }
    }
}

fn proxy_variance(v_star: &Direction, sigma: Option<&Covariance>) -> Result<f64> {
    match sigma {
        Some(s) => s.bilinear(v_star, v_star),
        None => Ok(v_star.vector().norm_squared()),
    }
}

/// Encoding quality `rho = sqrt(v*^T Sigma v* / (v*^T Sigma v* + sigma_eps^2))`.
///
/// `sigma = None` means whitened representations. Returns 0 when there is no
/// encoded signal (including the `0/0` case of zero signal and zero noise).
pub fn encoding_quality(enc: &ValueEncoding, sigma: Option<&Covariance>) -> Result<f64> {
    let signal = proxy_variance(&enc.v_star, sigma)?;
    let total = signal + enc.sigma_eps.powi(2);
    if signal <= 0.0 || total <= 0.0 {
        return Ok(0.0);
    }
    Ok((signal / total).sqrt().clamp(0.0, 1.0))
}

/// `a^T Sigma b`, with `Sigma = I` when `sigma` is `None`.
pub fn alignment_correlation(a: &Direction, b: &Direction, sigma: Option<&Covariance>) -> Result<f64> {
    match sigma {
        Some(s) => s.bilinear(a, b),
        None => a.dot(b),
    }
}
