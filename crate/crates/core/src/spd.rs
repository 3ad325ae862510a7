//! Matrix functions on the cone of symmetric positive-definite matrices.
//!
//! Every function of a matrix (square root, logarithm, exponential, powers,
//! inverse) goes through a single symmetric eigendecomposition. Dimensions in
//! this crate are small, so this is both the simplest and the most accurate
//! route.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative asymmetry accepted by the checked constructors.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue, relative to the Frobenius norm, accepted by [`SpdMatrix::new`].
pub const DEFINITENESS_TOL: f64 = 1e-12;
/// Condition number above which [`spd_inv`] refuses to invert.
pub const MAX_INVERSION_CONDITION: f64 = 1e14;

/// Read access shared by [`SymMatrix`] and [`SpdMatrix`].
pub trait Symmetric {
    fn matrix(&self) -> &DMatrix<f64>;

    fn dim(&self) -> usize {
        self.matrix().nrows()
    }

    fn frobenius_norm(&self) -> f64 {
        self.matrix().norm()
    }

    fn trace(&self) -> f64 {
        self.matrix().trace()
    }

    /// Row-major copy of the entries.
    fn to_row_major(&self) -> Vec<f64> {
        let m = self.matrix();
        let n = m.nrows();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(m[(i, j)]);
            }
        }
        out
    }
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::Domain("matrix dimension must be positive".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * m.norm().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::EmptyInput);
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Domain("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// A symmetric matrix; a tangent vector at a point of the SPD cone.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry, then stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square_finite(&m)?;
        check_symmetric(&m)?;
        Ok(Self(symmetrize(m)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    /// `(m + mᵀ)/2` without any tolerance check. For results that are
    /// symmetric in exact arithmetic.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    pub fn eig(&self) -> SymEig {
        sym_eig(self)
    }
}

impl Symmetric for SymMatrix {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// A symmetric positive-definite matrix: the covariance of a zero-mean Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Symmetrizes, then requires `λ_min > 1e-12 · ‖S‖_F`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square_finite(&m)?;
        check_symmetric(&m)?;
        let m = symmetrize(m);
        let eig = eig_descending(&m);
        let min = eig.eigenvalues[eig.eigenvalues.len() - 1];
        if !(min > DEFINITENESS_TOL * m.norm()) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, value))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// Accepts anything whose symmetrization admits a Cholesky factor.
    ///
    /// Used for outputs of maps that are SPD in exact arithmetic; the strict
    /// relative threshold of [`SpdMatrix::new`] would reject legitimately
    /// anisotropic covariances far out in the tail of the stationary law.
    pub(crate) fn from_computed(m: DMatrix<f64>) -> Option<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let m = symmetrize(m);
        nalgebra::Cholesky::new(m.clone())?;
        Some(Self(m))
    }

    /// Wraps a matrix built from a positive spectrum, e.g. `V diag(f(λ)) Vᵀ` with `f > 0`.
    pub(crate) fn from_spectral(m: DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Domain(format!("scale factor {c} is not positive")));
        }
        Ok(Self(&self.0 * c))
    }

    pub fn eig(&self) -> SymEig {
        eig_descending(&self.0)
    }

    pub fn log_det(&self) -> f64 {
        self.eig().eigenvalues.iter().map(|l| l.ln()).sum()
    }

    pub fn condition_number(&self) -> f64 {
        let e = self.eig();
        e.eigenvalues[0] / e.eigenvalues[e.eigenvalues.len() - 1]
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.0.amax()
    }

    pub fn sqrt(&self) -> SpdMatrix {
        spd_sqrt(self)
    }

    pub fn log(&self) -> SymMatrix {
        spd_log(self)
    }

    /// `P^t` for real `t`.
    pub fn powf(&self, t: f64) -> SpdMatrix {
        Self::from_spectral(self.eig().map(|l| l.powf(t)))
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        Self::from_spectral(self.eig().map(|l| 1.0 / l.sqrt()))
    }

    /// Inverse through the spectrum with no conditioning guard.
    pub(crate) fn inv_unguarded(&self) -> SpdMatrix {
        Self::from_spectral(self.eig().map(|l| 1.0 / l))
    }
}

impl Symmetric for SpdMatrix {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Spectral factors of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl SymEig {
    /// `basis · diag(f(λ)) · basisᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let v = f(l);
            scaled.column_mut(j).scale_mut(v);
        }
        scaled * self.basis.transpose()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn eig_descending(m: &DMatrix<f64>) -> SymEig {
    let n = m.nrows();
    if n == 1 {
        return SymEig {
            eigenvalues: DVector::from_element(1, m[(0, 0)]),
            basis: DMatrix::identity(1, 1),
        };
    }
    let raw = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| raw.eigenvalues[i]));
    let basis = DMatrix::from_fn(n, n, |r, c| raw.eigenvectors[(r, order[c])]);
    SymEig { eigenvalues, basis }
}

pub fn sym_eig(s: &SymMatrix) -> SymEig {
    eig_descending(&s.0)
}

pub fn spd_sqrt(p: &SpdMatrix) -> SpdMatrix {
    SpdMatrix::from_spectral(p.eig().map(f64::sqrt))
}

pub fn spd_log(p: &SpdMatrix) -> SymMatrix {
    SymMatrix::symmetrized(p.eig().map(f64::ln))
}

pub fn sym_exp(s: &SymMatrix) -> SpdMatrix {
    SpdMatrix::from_spectral(s.eig().map(f64::exp))
}

/// Inverse; refuses when the condition number exceeds [`MAX_INVERSION_CONDITION`].
pub fn spd_inv(p: &SpdMatrix) -> Result<SpdMatrix> {
    let e = p.eig();
    let condition = e.max() / e.min();
    if !(condition <= MAX_INVERSION_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    Ok(SpdMatrix::from_spectral(e.map(|l| 1.0 / l)))
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    !(max > 0.0) || min <= f64::EPSILON * max * m.nrows() as f64
}

/// `M P Mᵀ`.
pub fn congruence(m: &DMatrix<f64>, p: &SpdMatrix) -> Result<SpdMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: m.nrows(),
        });
    }
    if is_singular(m) {
        return Err(Error::SingularTransform);
    }
    let out = m * p.matrix() * m.transpose();
    SpdMatrix::from_computed(out).ok_or(Error::DegenerateCovariance(
        "congruence lost positive definiteness",
    ))
}

/// An `M` with `M P Mᵀ = I`; the canonical choice `P^{-1/2}`.
pub fn whitener(p: &SpdMatrix) -> DMatrix<f64> {
    p.inv_sqrt().into_matrix()
}

pub(crate) fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Eigenvalues of `P1 P2⁻¹`, descending, from the symmetric form `P2^{-1/2} P1 P2^{-1/2}`.
pub fn gen_eigenvalues(p1: &SpdMatrix, p2: &SpdMatrix) -> Result<DVector<f64>> {
    check_same_dim(p1.dim(), p2.dim())?;
    let w = p2.inv_sqrt();
    let s = symmetrize(w.matrix() * p1.matrix() * w.matrix());
    Ok(eig_descending(&s).eigenvalues)
}

/// `P1 ≤ P2` in the Löwner order: `λ_min(P2 − P1) ≥ −tol · max(1, ‖P2‖_F)`.
pub fn loewner_leq<S: Symmetric>(p1: &S, p2: &S, tol: f64) -> Result<bool> {
    check_same_dim(p1.dim(), p2.dim())?;
    let diff = symmetrize(p2.matrix() - p1.matrix());
    let min = eig_descending(&diff).min();
    Ok(min >= -tol * p2.frobenius_norm().max(1.0))
}

/// Random SPD matrix `M Mᵀ` with standard normal `M`, resampled until `cond ≤ max_cond`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_cond: f64) -> SpdMatrix {
    loop {
        let m = random_gaussian_matrix(rng, dim, dim);
        if let Some(p) = SpdMatrix::from_computed(&m * m.transpose()) {
            if p.condition_number() <= max_cond {
                return p;
            }
        }
    }
}

/// Square matrix with standard normal entries whose Gram matrix has `cond ≤ max_cond`.
pub fn random_invertible<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_cond: f64) -> DMatrix<f64> {
    loop {
        let m = random_gaussian_matrix(rng, dim, dim);
        if let Some(p) = SpdMatrix::from_computed(&m * m.transpose()) {
            if p.condition_number() <= max_cond {
                return m;
            }
        }
    }
}

/// Symmetric matrix with unit Frobenius norm and Gaussian direction.
pub fn random_symmetric_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SymMatrix {
    loop {
        let s = symmetrize(random_gaussian_matrix(rng, dim, dim));
        let norm = s.norm();
        if norm > 1e-12 {
            return SymMatrix(s / norm);
        }
    }
}

pub fn random_gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}
