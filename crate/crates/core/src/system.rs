//! The linear/Gaussian/Bernoulli system and its two Riccati maps.
//!
//! With the measurement noise normalized to the identity, the posterior
//! covariance after an observation is `g(P) = ((A P Aᵀ + Q)⁻¹ + 𝓘)⁻¹` and after
//! a dropped packet it is `h(P) = A P Aᵀ + Q`, with `Q = B Bᵀ` and `𝓘 = Cᵀ C`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spd::{matrix_from_rows, SpdMatrix, SymMatrix, Symmetric};

type Complex64 = nalgebra::Complex<f64>;

/// Numerical rank threshold, relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-10;

/// `(A, B, C)` with the derived `Q = BBᵀ` and `Info = CᵀC`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    q: SymMatrix,
    info: SymMatrix,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.nrows(),
            });
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: c.ncols(),
            });
        }
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite);
        }
        let q = SymMatrix::symmetrized(&b * b.transpose());
        let info = SymMatrix::symmetrized(c.transpose() * &c);
        Ok(Self { a, b, c, q, info })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            matrix_from_rows(a)?,
            matrix_from_rows(b)?,
            matrix_from_rows(c)?,
        )
    }

    /// Scalar system `x⁺ = a x + b w`, `y = c x + v`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .expect("1x1 system is always consistent")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn info(&self) -> &SymMatrix {
        &self.info
    }

    pub fn is_scalar(&self) -> bool {
        self.dim() == 1
    }

    /// Hex SHA-256 prefix over the bit patterns of A, B, C and their shapes.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for m in [&self.a, &self.b, &self.c] {
            hasher.update((m.nrows() as u64).to_le_bytes());
            hasher.update((m.ncols() as u64).to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    hasher.update(m[(i, j)].to_bits().to_le_bytes());
                }
            }
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    fn a_inverse(&self) -> Result<DMatrix<f64>> {
        if numerical_rank(&self.a) < self.dim() {
            return Err(Error::SingularDynamics);
        }
        self.a.clone().try_inverse().ok_or(Error::SingularDynamics)
    }
}

/// Scalar system `(a, Q, 𝓘)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSystem {
    pub a: f64,
    pub q: f64,
    pub info: f64,
}

impl ScalarSystem {
    pub fn new(a: f64, q: f64, info: f64) -> Self {
        Self { a, q, info }
    }

    pub fn from_model(model: &SystemModel) -> Result<Self> {
        if !model.is_scalar() {
            return Err(Error::Domain(format!(
                "companion systems are scalar; model has dimension {}",
                model.dim()
            )));
        }
        Ok(Self {
            a: model.a()[(0, 0)],
            q: model.q().matrix()[(0, 0)],
            info: model.info().matrix()[(0, 0)],
        })
    }

    pub fn predict(&self, p: f64) -> f64 {
        self.a * self.a * p + self.q
    }

    pub fn update(&self, p: f64) -> f64 {
        1.0 / (1.0 / self.predict(p) + self.info)
    }
}

/// Findings of the rank and PBH tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub a_invertible: bool,
    pub controllable: bool,
    pub observable: bool,
    pub stabilizable: bool,
    pub detectable: bool,
    /// Smallest `k` with `rank [C; CA; …; CA^{k-1}] = n`; `None` when unobservable.
    pub observability_index: Option<usize>,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.ncols();
    let mut out = DMatrix::zeros(n, p * blocks);
    let mut block = b.clone();
    for k in 0..blocks {
        out.view_mut((0, k * p), (n, p)).copy_from(&block);
        block = a * block;
    }
    out
}

fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let q = c.nrows();
    let mut out = DMatrix::zeros(q * blocks, n);
    let mut block = c.clone();
    for k in 0..blocks {
        out.view_mut((k * q, 0), (q, n)).copy_from(&block);
        block *= a;
    }
    out
}

/// PBH: `rank [λI − A, B] = n` for every eigenvalue with `|λ| ≥ 1`.
fn pbh_holds(a: &DMatrix<f64>, other: &DMatrix<f64>, stack_rows: bool) -> bool {
    let n = a.nrows();
    let eigenvalues = a.complex_eigenvalues();
    eigenvalues
        .iter()
        .filter(|l| l.norm() >= 1.0 - 1e-12)
        .all(|&l| {
            let shifted = DMatrix::from_fn(n, n, |i, j| {
                let diag = if i == j { l } else { Complex64::new(0.0, 0.0) };
                diag - Complex64::new(a[(i, j)], 0.0)
            });
            let extra = other.map(|x| Complex64::new(x, 0.0));
            let stacked = if stack_rows {
                let mut m = DMatrix::zeros(n + extra.nrows(), n);
                m.view_mut((0, 0), (n, n)).copy_from(&shifted);
                m.view_mut((n, 0), (extra.nrows(), n)).copy_from(&extra);
                m
            } else {
                let mut m = DMatrix::zeros(n, n + extra.ncols());
                m.view_mut((0, 0), (n, n)).copy_from(&shifted);
                m.view_mut((0, n), (n, extra.ncols())).copy_from(&extra);
                m
            };
            complex_rank(&stacked) == n
        })
}

pub fn validate(model: &SystemModel) -> StructuralReport {
    let n = model.dim();
    let a_invertible = numerical_rank(&model.a) == n;
    let controllable = numerical_rank(&controllability_matrix(&model.a, &model.b, n)) == n;
    let observability_index =
        (1..=n).find(|&k| numerical_rank(&observability_matrix(&model.a, &model.c, k)) == n);
    let observable = observability_index.is_some();
    let stabilizable = controllable || pbh_holds(&model.a, &model.b, false);
    let detectable = observable || pbh_holds(&model.a, &model.c, true);
    StructuralReport {
        a_invertible,
        controllable,
        observable,
        stabilizable,
        detectable,
        observability_index,
    }
}

/// Prediction without observation: `A P Aᵀ + Q`.
pub fn map_h(model: &SystemModel, p: &SpdMatrix) -> Result<SpdMatrix> {
    model.check_dim(p.dim())?;
    let out = &model.a * p.matrix() * model.a.transpose() + model.q.matrix();
    SpdMatrix::from_computed(out).ok_or(Error::DegenerateCovariance("A P Aᵀ + Q is singular"))
}

/// Prediction followed by a measurement update: `((A P Aᵀ + Q)⁻¹ + 𝓘)⁻¹`.
pub fn map_g(model: &SystemModel, p: &SpdMatrix) -> Result<SpdMatrix> {
    let predicted = map_h(model, p)?;
    let information = predicted.inv_unguarded().into_matrix() + model.info.matrix();
    let information = SpdMatrix::from_computed(information).ok_or(Error::DegenerateCovariance(
        "posterior information is singular",
    ))?;
    SpdMatrix::from_computed(information.inv_unguarded().into_matrix()).ok_or(
        Error::DegenerateCovariance("posterior covariance is singular"),
    )
}

/// `g` written on information matrices, `Y ↦ (A Y⁻¹ Aᵀ + Q)⁻¹ + 𝓘`.
///
/// Evaluated as `M (I + Q M)⁻¹ + 𝓘` with `M = A⁻ᵀ Y A⁻¹`, so a singular `Y`
/// (including `Y = 0`, total ignorance) never needs inverting.
pub fn map_g_info(model: &SystemModel, y: &SymMatrix) -> Result<SymMatrix> {
    model.check_dim(y.dim())?;
    let a_inv = model.a_inverse()?;
    let m = a_inv.transpose() * y.matrix() * &a_inv;
    let n = model.dim();
    let inner = DMatrix::identity(n, n) + model.q.matrix() * &m;
    let inner_inv = inner
        .try_inverse()
        .ok_or(Error::DegenerateCovariance("I + Q M is singular"))?;
    Ok(SymMatrix::symmetrized(m * inner_inv + model.info.matrix()))
}

/// `P∞ = g(P∞)` by plain iteration from two starts, `I` and `100 I`.
pub fn fixed_point(model: &SystemModel, tol: f64, max_iter: usize) -> Result<SpdMatrix> {
    let report = validate(model);
    if !report.detectable {
        return Err(Error::Structural("(A, C) is not detectable".into()));
    }
    if !report.stabilizable {
        return Err(Error::Structural("(A, B) is not stabilizable".into()));
    }
    let n = model.dim();
    let first = iterate_to_fixed_point(model, SpdMatrix::identity(n), tol, max_iter)?;
    let second =
        iterate_to_fixed_point(model, SpdMatrix::identity(n).scale(100.0)?, tol, max_iter)?;
    let gap = (first.matrix() - second.matrix()).norm();
    let agreement = (100.0 * tol).max(1e-8) * first.frobenius_norm();
    if gap > agreement {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            residual: gap / first.frobenius_norm(),
        });
    }
    Ok(first)
}

fn iterate_to_fixed_point(
    model: &SystemModel,
    start: SpdMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SpdMatrix> {
    let mut p = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = map_g(model, &p)?;
        residual = (next.matrix() - p.matrix()).norm() / next.frobenius_norm();
        p = next;
        if residual <= tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Default tolerances for [`fixed_point`].
pub const FIXED_POINT_TOL: f64 = 1e-14;
pub const FIXED_POINT_MAX_ITER: usize = 100_000;

/// `P∞` with the default tolerances.
pub fn steady_state(model: &SystemModel) -> Result<SpdMatrix> {
    fixed_point(model, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER)
}

/// `W_pess = sup_{P ≥ P∞} gⁿ(P)`: `n` information-form steps from `Y = 0`.
///
/// `g` is order preserving, so the supremum is the limit `P → ∞`, which in
/// information form is the start `Y = 0`.
pub fn pessimist_reset(model: &SystemModel, horizon: usize) -> Result<SpdMatrix> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let mut y = SymMatrix::zeros(model.dim());
    for _ in 0..horizon {
        y = map_g_info(model, &y)?;
    }
    let e = y.eig();
    if !(e.min() > RANK_TOL * e.max().max(f64::MIN_POSITIVE)) {
        return Err(Error::NotObservableAtHorizon { horizon });
    }
    SpdMatrix::from_computed(e.map(|l| 1.0 / l)).ok_or(Error::NotObservableAtHorizon { horizon })
}

/// Observability index of the model, or a structural error when unobservable.
pub fn default_horizon(model: &SystemModel) -> Result<usize> {
    validate(model)
        .observability_index
        .ok_or_else(|| Error::Structural("(A, C) is not observable".into()))
}

/// Convenience for building column vectors in tests and configs.
pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

pub fn row(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}
