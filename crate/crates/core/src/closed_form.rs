//! Exact scalar analysis of the companion systems and the bound on the
//! expected squared affine distance from `P∞`.
//!
//! For the scalar companions the covariance is a function of `τ`, the number
//! of steps since the last arrival, and `τ` is geometric:
//! `P(τ = j) = (1 − γ̄)^j γ̄`. With `W` the reset value,
//!
//! ```text
//! P(τ)        = a^{2τ} W + Q (a^{2τ} − 1)/(a² − 1)
//! E{P}        = γ̄ (W + Q/(a²−1)) Σ_j [a²(1−γ̄)]^j − Q/(a²−1)
//! E{√P}       = γ̄ Σ_j [|a|(1−γ̄)]^j √(W + Q/(a²−1) − Q/(a^{2j}(a²−1)))
//! ```
//!
//! so `E{P}` is finite iff `γ̄ > 1 − 1/a²` and `E{√P}` iff `γ̄ > 1 − 1/|a|`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spd::{congruence, whitener, SpdMatrix, Symmetric};
use crate::system::{pessimist_reset, steady_state, ScalarSystem, SystemModel};

/// Default certified truncation tolerance for the numeric series.
pub const SERIES_TOL: f64 = 1e-12;
/// Hard cap on summed terms; reaching it leaves the result uncertified.
pub const MAX_SERIES_TERMS: usize = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesValue {
    Finite(f64),
    Diverged,
}

impl SeriesValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            SeriesValue::Finite(v) => Some(v),
            SeriesValue::Diverged => None,
        }
    }
}

impl fmt::Display for SeriesValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesValue::Finite(v) => write!(f, "{v:.16e}"),
            SeriesValue::Diverged => f.write_str("diverged"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarSeriesResult {
    pub value: SeriesValue,
    pub converged: bool,
    /// Geometric ratio governing convergence.
    pub ratio: f64,
    pub terms_used: usize,
    pub truncation_error_bound: f64,
}

impl ScalarSeriesResult {
    fn diverged(ratio: f64) -> Self {
        Self {
            value: SeriesValue::Diverged,
            converged: false,
            ratio,
            terms_used: 0,
            truncation_error_bound: f64::INFINITY,
        }
    }
}

fn check_gamma(gamma_bar: f64) -> Result<()> {
    if !(gamma_bar > 0.0 && gamma_bar <= 1.0) {
        return Err(Error::Domain(format!(
            "arrival probability {gamma_bar} outside (0, 1]"
        )));
    }
    Ok(())
}

fn check_unstable(a: f64) -> Result<()> {
    if !(a.abs() > 1.0) {
        return Err(Error::Domain(format!(
            "closed-form series need |a| > 1, got a = {a}"
        )));
    }
    Ok(())
}

/// `P(τ = j) = (1 − γ̄)^j γ̄`.
pub fn tau_pmf(gamma_bar: f64, j: usize) -> Result<f64> {
    check_gamma(gamma_bar)?;
    Ok((1.0 - gamma_bar).powi(j as i32) * gamma_bar)
}

/// Threshold for a bounded `E{P}`: `1 − 1/a²`.
pub fn critical_prob_cov(a: f64) -> Result<f64> {
    if !(a.abs() > 1.0) {
        return Err(Error::NoCriticalValue(a.abs()));
    }
    Ok(1.0 - 1.0 / (a * a))
}

/// Threshold for a bounded `E{√P}` (equivalently `E{|e|}`): `1 − 1/|a|`.
pub fn critical_prob_abs(a: f64) -> Result<f64> {
    if !(a.abs() > 1.0) {
        return Err(Error::NoCriticalValue(a.abs()));
    }
    Ok(1.0 - 1.0 / a.abs())
}

/// Positive root of `g(P) = P` in the scalar case:
/// `𝓘 a² P² + (𝓘 Q + 1 − a²) P − Q = 0`.
pub fn scalar_fixed_point(a: f64, q: f64, info: f64) -> Result<f64> {
    if !(q >= 0.0 && info >= 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!(
            "need Q >= 0 and I >= 0, got Q = {q}, I = {info}"
        )));
    }
    let lead = info * a * a;
    let mid = info * q + 1.0 - a * a;
    let root = if lead == 0.0 {
        // linear: mid · P = Q
        if mid > 0.0 {
            q / mid
        } else {
            0.0
        }
    } else if mid >= 0.0 {
        let disc = (mid * mid + 4.0 * lead * q).sqrt();
        if mid + disc > 0.0 {
            2.0 * q / (mid + disc)
        } else {
            0.0
        }
    } else {
        (-mid + (mid * mid + 4.0 * lead * q).sqrt()) / (2.0 * lead)
    };
    if !(root > 0.0 && root.is_finite()) {
        return Err(Error::Structural(format!(
            "no positive fixed point for a = {a}, Q = {q}, I = {info}"
        )));
    }
    Ok(root)
}

fn reset_value(sys: &ScalarSystem, optimist: bool) -> Result<f64> {
    if optimist {
        let p_inf = scalar_fixed_point(sys.a, sys.q, sys.info)?;
        let w = sys.update(p_inf);
        assert!(
            (w - p_inf).abs() <= 1e-9 * p_inf,
            "optimist reset {w} differs from the fixed point {p_inf}"
        );
        Ok(w)
    } else {
        if !(sys.info > 0.0) {
            return Err(Error::Domain("pessimist reset needs I > 0".into()));
        }
        Ok(1.0 / sys.info)
    }
}

/// `E{P}` for a companion with reset `w`, from the closed geometric sum.
fn expected_p(sys: &ScalarSystem, gamma_bar: f64, w: f64) -> Result<ScalarSeriesResult> {
    check_gamma(gamma_bar)?;
    check_unstable(sys.a)?;
    let a2 = sys.a * sys.a;
    let ratio = a2 * (1.0 - gamma_bar);
    if !(ratio < 1.0) {
        return Ok(ScalarSeriesResult::diverged(ratio));
    }
    let offset = sys.q / (a2 - 1.0);
    let value = gamma_bar * (w + offset) / (1.0 - ratio) - offset;
    Ok(ScalarSeriesResult {
        value: SeriesValue::Finite(value),
        converged: true,
        ratio,
        terms_used: 0,
        truncation_error_bound: 0.0,
    })
}

/// `E{√P}` for a companion with reset `w`.
///
/// Terms are summed until the remaining tail is enclosed in an interval of
/// half-width `≤ tol`; the tail terms increase towards `√(W + Q/(a²−1))`, so
/// the tail lies between the geometric sums started from its first term and
/// from that limit. The midpoint of the enclosure is added.
fn expected_sqrt_p(
    sys: &ScalarSystem,
    gamma_bar: f64,
    w: f64,
    tol: f64,
) -> Result<ScalarSeriesResult> {
    check_gamma(gamma_bar)?;
    check_unstable(sys.a)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let a2 = sys.a * sys.a;
    let ratio = sys.a.abs() * (1.0 - gamma_bar);
    if !(ratio < 1.0) {
        return Ok(ScalarSeriesResult::diverged(ratio));
    }
    let offset = sys.q / (a2 - 1.0);
    let limit = (w + offset).sqrt();
    let term = |j: usize| -> f64 { (w + offset - offset / a2.powi(j as i32)).max(0.0).sqrt() };
    let mut sum = 0.0;
    let mut weight = gamma_bar; // γ̄ · ratio^j
    let mut j = 0;
    loop {
        let tail_scale = weight / (1.0 - ratio);
        let low = tail_scale * term(j);
        let high = tail_scale * limit;
        let half_width = 0.5 * (high - low);
        if half_width <= tol || weight == 0.0 {
            return Ok(ScalarSeriesResult {
                value: SeriesValue::Finite(sum + 0.5 * (low + high)),
                converged: true,
                ratio,
                terms_used: j,
                truncation_error_bound: half_width.max(0.0),
            });
        }
        if j >= MAX_SERIES_TERMS {
            return Ok(ScalarSeriesResult {
                value: SeriesValue::Finite(sum + 0.5 * (low + high)),
                converged: false,
                ratio,
                terms_used: j,
                truncation_error_bound: half_width,
            });
        }
        sum += weight * term(j);
        weight *= ratio;
        j += 1;
    }
}

/// `E{P_opt}`, reset `W_opt = g(P∞) = P∞`.
pub fn expected_p_opt(sys: &ScalarSystem, gamma_bar: f64) -> Result<ScalarSeriesResult> {
    check_unstable(sys.a)?;
    expected_p(sys, gamma_bar, reset_value(sys, true)?)
}

/// `E{P_pess}`, reset `W_pess = 𝓘⁻¹`.
pub fn expected_p_pess(sys: &ScalarSystem, gamma_bar: f64) -> Result<ScalarSeriesResult> {
    check_unstable(sys.a)?;
    expected_p(sys, gamma_bar, reset_value(sys, false)?)
}

pub fn expected_sqrt_p_opt(
    sys: &ScalarSystem,
    gamma_bar: f64,
    tol: f64,
) -> Result<ScalarSeriesResult> {
    check_unstable(sys.a)?;
    expected_sqrt_p(sys, gamma_bar, reset_value(sys, true)?, tol)
}

pub fn expected_sqrt_p_pess(
    sys: &ScalarSystem,
    gamma_bar: f64,
    tol: f64,
) -> Result<ScalarSeriesResult> {
    check_unstable(sys.a)?;
    expected_sqrt_p(sys, gamma_bar, reset_value(sys, false)?, tol)
}

/// `E{|e|} = √(2/π) √P` for a zero-mean Gaussian error of variance `P`.
pub fn expected_abs_error(p: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::Domain(format!("variance {p} is negative")));
    }
    Ok((2.0 / std::f64::consts::PI).sqrt() * p.sqrt())
}

/// Constants of the bound `E{d²(P∞, P)} ≤ γ̄ⁿ Σ_i (1 − γ̄ⁿ)^i f(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanBoundConstants {
    pub horizon: usize,
    pub dim: usize,
    /// Spectral norms in whitened coordinates (`M P∞ Mᵀ = I`).
    pub norm_a: f64,
    pub norm_q: f64,
    pub norm_w_pess: f64,
    /// `f(i) = c2 i² + c3 i + c4` when `‖A′‖ > 1`; unused otherwise.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl MeanBoundConstants {
    /// Bound on `d²(I, P′_pess)` after `i` blocks without a full block of arrivals.
    pub fn summand(&self, i: usize) -> f64 {
        let i = i as f64;
        if self.norm_a > 1.0 {
            self.c2 * i * i + self.c3 * i + self.c4
        } else {
            let growth = self.norm_w_pess + self.horizon as f64 * i * self.norm_q;
            self.dim as f64 * growth.ln().max(0.0).powi(2)
        }
    }
}

fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Explicit constants for [`riemannian_mean_bound`].
///
/// In coordinates where `P∞ = I` (congruence by `M = P∞^{-1/2}`), the
/// pessimist chain of the length-`n` power IFS resets to `W′ = M W_pess Mᵀ`
/// after a block of `n` arrivals and otherwise applies `hⁿ`, so after `τ` such
/// blocks
///
/// ```text
/// ‖P′‖ ≤ ‖A′‖^{2nτ} ‖W′‖ + ‖Q′‖ Σ_{i<nτ} ‖A′‖^{2i} ≤ c1 ‖A′‖^{2nτ},
/// c1 = ‖W′‖ + ‖Q′‖ / (‖A′‖² − 1)         (‖A′‖ > 1).
/// ```
///
/// Since `P′ ≥ I`, `d²(I, P′) ≤ dim · log² ‖P′‖ ≤ dim (2nτ log‖A′‖ + log c1)²`,
/// which expands to `c2 τ² + c3 τ + c4` with `c2 = 4 dim n² ℓ²`,
/// `c3 = 4 dim n ℓ log c1`, `c4 = dim log² c1`, `ℓ = log ‖A′‖`.
///
/// When `‖A′‖ ≤ 1` the geometric sum is replaced by `‖P′‖ ≤ ‖W′‖ + nτ‖Q′‖`.
pub fn mean_bound_constants(model: &SystemModel, horizon: usize) -> Result<MeanBoundConstants> {
    let p_inf = steady_state(model)?;
    let w_pess = pessimist_reset(model, horizon)?;
    let m = whitener(&p_inf);
    let m_inv = p_inf.sqrt().into_matrix();
    let a_w = &m * model.a() * &m_inv;
    let q_w = &m * model.q().matrix() * m.transpose();
    let w_w = congruence(&m, &w_pess)?;

    let norm_a = spectral_norm(&a_w);
    let norm_q = spectral_norm(&q_w);
    let norm_w_pess = w_w.eig().max();
    let dim = model.dim() as f64;
    let n = horizon as f64;
    let (c1, c2, c3, c4) = if norm_a > 1.0 {
        let ell = norm_a.ln();
        let c1 = norm_w_pess + norm_q / (norm_a * norm_a - 1.0);
        let log_c1 = c1.ln().max(0.0);
        (
            c1,
            4.0 * dim * n * n * ell * ell,
            4.0 * dim * n * ell * log_c1,
            dim * log_c1 * log_c1,
        )
    } else {
        (f64::NAN, 0.0, 0.0, 0.0)
    };
    Ok(MeanBoundConstants {
        horizon,
        dim: model.dim(),
        norm_a,
        norm_q,
        norm_w_pess,
        c1,
        c2,
        c3,
        c4,
    })
}

/// Upper bound on `E{d²(P∞, P)}` under the stationary law, affine metric.
///
/// Sums `γ̄ⁿ Σ_i (1 − γ̄ⁿ)^i f(i)`. For `i ≥ K ≥ 1` the summand grows at most
/// by `((K+1)/K)²` per step, so the tail after `K` terms is at most
/// `γ̄ⁿ r^K f(K) / (1 − r ((K+1)/K)²)`, `r = 1 − γ̄ⁿ`; summation stops once
/// that is `≤ tol`. The series converges for every `γ̄ ∈ (0, 1]`.
pub fn riemannian_mean_bound(
    model: &SystemModel,
    horizon: usize,
    gamma_bar: f64,
    tol: f64,
) -> Result<ScalarSeriesResult> {
    check_gamma(gamma_bar)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let constants = mean_bound_constants(model, horizon)?;
    Ok(sum_mean_bound(&constants, gamma_bar, tol))
}

pub fn sum_mean_bound(
    constants: &MeanBoundConstants,
    gamma_bar: f64,
    tol: f64,
) -> ScalarSeriesResult {
    let lead = gamma_bar.powi(constants.horizon as i32);
    let ratio = 1.0 - lead;
    let mut sum = lead * constants.summand(0);
    let mut weight = lead; // lead · ratio^k
    let mut k = 1;
    loop {
        weight *= ratio;
        let growth = ((k + 1) as f64 / k as f64).powi(2);
        let tail = if weight == 0.0 {
            0.0
        } else if ratio * growth < 1.0 {
            weight * constants.summand(k) / (1.0 - ratio * growth)
        } else {
            f64::INFINITY
        };
        if tail <= tol || k >= MAX_SERIES_TERMS {
            return ScalarSeriesResult {
                value: SeriesValue::Finite(sum),
                converged: tail <= tol,
                ratio,
                terms_used: k,
                truncation_error_bound: tail,
            };
        }
        sum += weight * constants.summand(k);
        k += 1;
    }
}

/// Monte Carlo estimate of `E{d²(P∞, P)}` and its standard error.
pub fn mean_squared_distance(p_inf: &SpdMatrix, draws: &[SpdMatrix]) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values: Vec<f64> = draws
        .iter()
        .map(|d| {
            crate::metrics::distance(crate::metrics::MetricKind::AffineInvariant, p_inf, d)
                .map(|x| x * x)
        })
        .collect::<Result<_>>()?;
    Ok(crate::stats::mean_and_stderr(&values))
}
