//! Four notions of "average covariance", one per metric.
//!
//! Each is the minimizer of the expected squared distance for its metric: the
//! three flat metrics admit closed forms (arithmetic, harmonic and square-root
//! means), the affine-invariant one is computed by a Karcher fixed-point
//! iteration.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{distance, MetricKind};
use crate::spd::{
    check_same_dim, random_symmetric_unit, spd_inv, spd_sqrt, sym_exp, SpdMatrix, SymMatrix,
    Symmetric,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanResult {
    #[serde(skip)]
    pub mean: SpdMatrix,
    pub kind: MetricKind,
    pub iterations: usize,
    /// Norm of the first-order condition at the returned point; zero for closed forms.
    pub residual: f64,
    pub converged: bool,
}

impl MeanResult {
    fn closed_form(mean: SpdMatrix, kind: MetricKind) -> Self {
        Self {
            mean,
            kind,
            iterations: 0,
            residual: 0.0,
            converged: true,
        }
    }
}

/// Karcher solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KarcherOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            step: 1.0,
        }
    }
}

/// Normalized weights; `None` means uniform.
fn resolve_weights(samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = samples[0].dim();
    for s in samples {
        check_same_dim(dim, s.dim())?;
    }
    match weights {
        None => Ok(vec![1.0 / samples.len() as f64; samples.len()]),
        Some(w) => {
            if w.len() != samples.len() {
                return Err(Error::DimensionMismatch {
                    expected: samples.len(),
                    found: w.len(),
                });
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Domain(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
            }
            Ok(w.iter().map(|x| x / total).collect())
        }
    }
}

/// `Σ wᵢ Xᵢ` in sample order.
fn weighted_sum<'a>(
    terms: impl Iterator<Item = &'a DMatrix<f64>>,
    weights: &[f64],
    dim: usize,
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(dim, dim);
    for (t, w) in terms.zip(weights) {
        acc += t * *w;
    }
    acc
}

fn computed(m: DMatrix<f64>) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(m).ok_or(Error::DegenerateCovariance("mean is not positive definite"))
}

pub fn euclidean_mean(samples: &[SpdMatrix]) -> Result<MeanResult> {
    euclidean_mean_weighted(samples, None)
}

pub fn euclidean_mean_weighted(
    samples: &[SpdMatrix],
    weights: Option<&[f64]>,
) -> Result<MeanResult> {
    let w = resolve_weights(samples, weights)?;
    let dim = samples[0].dim();
    let mean = weighted_sum(samples.iter().map(|s| s.matrix()), &w, dim);
    Ok(MeanResult::closed_form(
        computed(mean)?,
        MetricKind::FlatCov,
    ))
}

/// `(E P⁻¹)⁻¹`.
pub fn harmonic_mean(samples: &[SpdMatrix]) -> Result<MeanResult> {
    harmonic_mean_weighted(samples, None)
}

pub fn harmonic_mean_weighted(
    samples: &[SpdMatrix],
    weights: Option<&[f64]>,
) -> Result<MeanResult> {
    let w = resolve_weights(samples, weights)?;
    let dim = samples[0].dim();
    let inverses: Vec<SpdMatrix> = samples.iter().map(spd_inv).collect::<Result<_>>()?;
    let info = computed(weighted_sum(inverses.iter().map(|s| s.matrix()), &w, dim))?;
    Ok(MeanResult::closed_form(
        spd_inv(&info)?,
        MetricKind::FlatInfo,
    ))
}

/// `(E √P)²`.
pub fn sqrt_mean(samples: &[SpdMatrix]) -> Result<MeanResult> {
    sqrt_mean_weighted(samples, None)
}

pub fn sqrt_mean_weighted(samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult> {
    let w = resolve_weights(samples, weights)?;
    let dim = samples[0].dim();
    let roots: Vec<SpdMatrix> = samples.iter().map(spd_sqrt).collect();
    let root_mean = computed(weighted_sum(roots.iter().map(|s| s.matrix()), &w, dim))?;
    let m = root_mean.matrix();
    Ok(MeanResult::closed_form(
        computed(m * m)?,
        MetricKind::FlatSqrt,
    ))
}

pub fn karcher_mean(samples: &[SpdMatrix], options: KarcherOptions) -> Result<MeanResult> {
    karcher_mean_weighted(samples, None, options)
}

/// Riemannian (Karcher) mean for the affine-invariant metric.
///
/// Fixed-point iteration `X ← X^{1/2} exp(step · T) X^{1/2}` with
/// `T = Σ wᵢ log(X^{-1/2} Pᵢ X^{-1/2})`, started at the arithmetic mean and
/// stopped once `‖T‖_F ≤ tol`. If the tangent mean grows between iterates the
/// step is halved. Log maps are evaluated in parallel but summed in sample
/// order, so the result does not depend on the thread count.
pub fn karcher_mean_weighted(
    samples: &[SpdMatrix],
    weights: Option<&[f64]>,
    options: KarcherOptions,
) -> Result<MeanResult> {
    let w = resolve_weights(samples, weights)?;
    if !(options.step > 0.0 && options.step <= 1.0) {
        return Err(Error::Domain(format!(
            "karcher step {} outside (0, 1]",
            options.step
        )));
    }
    let dim = samples[0].dim();
    let mut x = euclidean_mean_weighted(samples, Some(&w))?.mean;
    let mut step = options.step;
    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let root = x.sqrt();
        let inv_root = x.inv_sqrt();
        let logs: Vec<DMatrix<f64>> = samples
            .par_iter()
            .map(|p| {
                let whitened =
                    SpdMatrix::from_spectral(inv_root.matrix() * p.matrix() * inv_root.matrix());
                whitened.log().into_matrix()
            })
            .collect();
        let tangent = SymMatrix::symmetrized(weighted_sum(logs.iter(), &w, dim));
        let residual = tangent.frobenius_norm();
        if residual <= options.tol {
            return Ok(MeanResult {
                mean: x,
                kind: MetricKind::AffineInvariant,
                iterations,
                residual,
                converged: true,
            });
        }
        if iterations >= options.max_iter {
            return Ok(MeanResult {
                mean: x,
                kind: MetricKind::AffineInvariant,
                iterations,
                residual,
                converged: false,
            });
        }
        if residual > previous {
            step *= 0.5;
        }
        previous = residual;
        let update = sym_exp(&tangent.scale(step));
        x = SpdMatrix::from_spectral(root.matrix() * update.matrix() * root.matrix());
        iterations += 1;
    }
}

/// An averaging rule, one per metric.
pub trait MeanEstimator: Send + Sync {
    fn kind(&self) -> MetricKind;

    fn estimate(&self, samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult>;
}

pub struct ArithmeticMean;
pub struct HarmonicMean;
pub struct SqrtMean;
pub struct KarcherMean(pub KarcherOptions);

impl MeanEstimator for ArithmeticMean {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatCov
    }

    fn estimate(&self, samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult> {
        euclidean_mean_weighted(samples, weights)
    }
}

impl MeanEstimator for HarmonicMean {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatInfo
    }

    fn estimate(&self, samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult> {
        harmonic_mean_weighted(samples, weights)
    }
}

impl MeanEstimator for SqrtMean {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatSqrt
    }

    fn estimate(&self, samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult> {
        sqrt_mean_weighted(samples, weights)
    }
}

impl MeanEstimator for KarcherMean {
    fn kind(&self) -> MetricKind {
        MetricKind::AffineInvariant
    }

    fn estimate(&self, samples: &[SpdMatrix], weights: Option<&[f64]>) -> Result<MeanResult> {
        karcher_mean_weighted(samples, weights, self.0)
    }
}

/// Mean estimators keyed by the metric they minimize.
pub struct MeanRegistry {
    entries: BTreeMap<MetricKind, Box<dyn MeanEstimator>>,
}

impl MeanRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin(karcher: KarcherOptions) -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(ArithmeticMean));
        registry.register(Box::new(HarmonicMean));
        registry.register(Box::new(SqrtMean));
        registry.register(Box::new(KarcherMean(karcher)));
        registry
    }

    pub fn register(&mut self, estimator: Box<dyn MeanEstimator>) {
        self.entries.insert(estimator.kind(), estimator);
    }

    pub fn get(&self, kind: MetricKind) -> Option<&dyn MeanEstimator> {
        self.entries.get(&kind).map(|e| e.as_ref())
    }

    pub fn get_by_name(&self, name: &str) -> Option<&dyn MeanEstimator> {
        self.get(name.parse().ok()?)
    }
}

/// Mean squared distance from `candidate` to the samples.
pub fn quadratic_risk(
    candidate: &SpdMatrix,
    samples: &[SpdMatrix],
    kind: MetricKind,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for s in samples {
        total += distance(kind, candidate, s)?.powi(2);
    }
    Ok(total / samples.len() as f64)
}

/// Size of the multiplicative perturbations used by [`variational_check`].
pub const PERTURBATION_SIZE: f64 = 0.05;

/// Whether `candidate` has no larger risk than any of `trials` random
/// perturbations `X^{1/2} exp(εS) X^{1/2}`, `‖S‖_F = 1`, `ε = 0.05`.
///
/// Returns `false` when the risk cannot be evaluated (e.g. an ill-conditioned
/// inverse under the flat-info metric).
pub fn variational_check(
    candidate: &SpdMatrix,
    samples: &[SpdMatrix],
    kind: MetricKind,
    trials: usize,
    seed: u64,
) -> bool {
    let Ok(base) = quadratic_risk(candidate, samples, kind) else {
        return false;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = candidate.sqrt();
    let slack = 1e-12 * base.max(f64::MIN_POSITIVE);
    for _ in 0..trials {
        let direction = random_symmetric_unit(&mut rng, candidate.dim());
        let bump = sym_exp(&direction.scale(PERTURBATION_SIZE));
        let moved = SpdMatrix::from_spectral(root.matrix() * bump.matrix() * root.matrix());
        match quadratic_risk(&moved, samples, kind) {
            Ok(r) if r + slack < base => return false,
            Ok(_) => {}
            Err(_) => return false,
        }
    }
    true
}
