//! Distances between zero-mean Gaussians, identified with their covariances.
//!
//! Four candidates are provided, each behind the [`Distance`] trait and
//! registered by its token in a [`MetricRegistry`]:
//!
//! | token       | distance                          |
//! |-------------|-----------------------------------|
//! | `flat-cov`  | `‖P1 − P2‖_F`                     |
//! | `flat-info` | `‖P1⁻¹ − P2⁻¹‖_F`                 |
//! | `flat-sqrt` | `‖√P1 − √P2‖_F`                   |
//! | `affine`    | `(Σ log² λ_i(P1 P2⁻¹))^{1/2}`     |
//!
//! Only the last is invariant under `P ↦ M P Mᵀ` and under inversion.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{
    check_same_dim, gen_eigenvalues, loewner_leq, spd_inv, spd_sqrt, SpdMatrix, SymMatrix,
    Symmetric,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "flat-cov")]
    FlatCov,
    #[serde(rename = "flat-info")]
    FlatInfo,
    #[serde(rename = "flat-sqrt")]
    FlatSqrt,
    #[serde(rename = "affine")]
    AffineInvariant,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::FlatCov,
        MetricKind::FlatInfo,
        MetricKind::FlatSqrt,
        MetricKind::AffineInvariant,
    ];

    pub fn token(self) -> &'static str {
        match self {
            MetricKind::FlatCov => "flat-cov",
            MetricKind::FlatInfo => "flat-info",
            MetricKind::FlatSqrt => "flat-sqrt",
            MetricKind::AffineInvariant => "affine",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                Error::Domain(format!(
                    "unknown metric '{s}' (expected flat-cov, flat-info, flat-sqrt or affine)"
                ))
            })
    }
}

/// A distance on the SPD cone.
pub trait Distance: Send + Sync {
    fn kind(&self) -> MetricKind;

    fn distance(&self, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64>;

    fn name(&self) -> &'static str {
        self.kind().token()
    }
}

/// Frobenius distance after mapping both points through a chart.
fn chart_distance(
    p1: &SpdMatrix,
    p2: &SpdMatrix,
    chart: impl Fn(&SpdMatrix) -> Result<SpdMatrix>,
) -> Result<f64> {
    check_same_dim(p1.dim(), p2.dim())?;
    let a = chart(p1)?;
    let b = chart(p2)?;
    Ok((a.matrix() - b.matrix()).norm())
}

pub struct FlatCov;
pub struct FlatInfo;
pub struct FlatSqrt;
pub struct AffineInvariant;

impl Distance for FlatCov {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatCov
    }

    fn distance(&self, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
        chart_distance(p1, p2, |p| Ok(p.clone()))
    }
}

impl Distance for FlatInfo {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatInfo
    }

    fn distance(&self, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
        chart_distance(p1, p2, spd_inv)
    }
}

impl Distance for FlatSqrt {
    fn kind(&self) -> MetricKind {
        MetricKind::FlatSqrt
    }

    fn distance(&self, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
        chart_distance(p1, p2, |p| Ok(spd_sqrt(p)))
    }
}

/// Lexicographic order on entries; fixes the argument order so that the
/// affine distance is bit-for-bit symmetric.
fn entry_order(a: &SpdMatrix, b: &SpdMatrix) -> Ordering {
    a.matrix()
        .iter()
        .zip(b.matrix().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl Distance for AffineInvariant {
    fn kind(&self) -> MetricKind {
        MetricKind::AffineInvariant
    }

    fn distance(&self, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
        check_same_dim(p1.dim(), p2.dim())?;
        let (x, y) = match entry_order(p1, p2) {
            Ordering::Equal => return Ok(0.0),
            Ordering::Less => (p1, p2),
            Ordering::Greater => (p2, p1),
        };
        let lambdas = gen_eigenvalues(x, y)?;
        Ok(lambdas.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
    }
}

/// Metrics by token.
pub struct MetricRegistry {
    entries: BTreeMap<&'static str, Box<dyn Distance>>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The four built-in metrics.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(FlatCov));
        registry.register(Box::new(FlatInfo));
        registry.register(Box::new(FlatSqrt));
        registry.register(Box::new(AffineInvariant));
        registry
    }

    pub fn register(&mut self, metric: Box<dyn Distance>) {
        self.entries.insert(metric.name(), metric);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Distance> {
        self.entries.get(name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

/// Static dispatch to the built-in implementation of `kind`.
pub fn metric(kind: MetricKind) -> &'static dyn Distance {
    match kind {
        MetricKind::FlatCov => &FlatCov,
        MetricKind::FlatInfo => &FlatInfo,
        MetricKind::FlatSqrt => &FlatSqrt,
        MetricKind::AffineInvariant => &AffineInvariant,
    }
}

pub fn distance(kind: MetricKind, p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
    metric(kind).distance(p1, p2)
}

/// `½ Tr(P⁻¹ X P⁻¹ Y)`: the Fisher information metric on zero-mean Gaussians.
pub fn fisher_metric(p: &SpdMatrix, x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    check_same_dim(p.dim(), x.dim())?;
    check_same_dim(p.dim(), y.dim())?;
    let p_inv = p.inv_unguarded();
    let left = p_inv.matrix() * x.matrix();
    let right = p_inv.matrix() * y.matrix();
    Ok(0.5 * (left * right).trace())
}

/// Affine-invariant geodesic `P1^{1/2} (P1^{-1/2} P2 P1^{-1/2})^t P1^{1/2}`.
pub fn geodesic(p1: &SpdMatrix, p2: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    check_same_dim(p1.dim(), p2.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!(
            "geodesic parameter {t} outside [0, 1]"
        )));
    }
    if t == 0.0 {
        return Ok(p1.clone());
    }
    if t == 1.0 {
        return Ok(p2.clone());
    }
    let root = p1.sqrt();
    let inv_root = p1.inv_sqrt();
    let whitened = SpdMatrix::from_spectral(inv_root.matrix() * p2.matrix() * inv_root.matrix());
    let moved = whitened.powf(t);
    Ok(SpdMatrix::from_spectral(
        root.matrix() * moved.matrix() * root.matrix(),
    ))
}

/// Length of a sampled curve `γ(t_k)`, `t_k = k/(K−1)`.
///
/// Velocities come from finite differences (central inside, one-sided at the
/// ends) and speeds are integrated with the trapezoidal rule. For the affine
/// kind the speed is `√(tensor_scale · fisher_metric(γ, γ̇, γ̇))`; the Fisher
/// tensor carries a factor ½, so `tensor_scale = 2` reproduces the affine
/// distance along geodesics. Flat kinds measure the speed of the chart image
/// in the Frobenius norm and ignore `tensor_scale`.
pub fn curve_length(kind: MetricKind, samples: &[SpdMatrix], tensor_scale: f64) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::Domain("curve needs at least two samples".into()));
    }
    let dim = samples[0].dim();
    for s in samples {
        check_same_dim(dim, s.dim())?;
    }
    let dt = 1.0 / (k - 1) as f64;
    let chart: Vec<DMatrix<f64>> = match kind {
        MetricKind::FlatCov | MetricKind::AffineInvariant => {
            samples.iter().map(|s| s.matrix().clone()).collect()
        }
        MetricKind::FlatInfo => samples
            .iter()
            .map(|s| spd_inv(s).map(|m| m.into_matrix()))
            .collect::<Result<_>>()?,
        MetricKind::FlatSqrt => samples.iter().map(|s| spd_sqrt(s).into_matrix()).collect(),
    };
    let velocity = |i: usize| -> DMatrix<f64> {
        if i == 0 {
            (&chart[1] - &chart[0]) / dt
        } else if i == k - 1 {
            (&chart[k - 1] - &chart[k - 2]) / dt
        } else {
            (&chart[i + 1] - &chart[i - 1]) / (2.0 * dt)
        }
    };
    let mut speeds = Vec::with_capacity(k);
    for (i, sample) in samples.iter().enumerate().take(k) {
        let v = velocity(i);
        let speed = match kind {
            MetricKind::AffineInvariant => {
                let v = SymMatrix::symmetrized(v);
                (tensor_scale * fisher_metric(sample, &v, &v)?)
                    .max(0.0)
                    .sqrt()
            }
            _ => v.norm(),
        };
        speeds.push(speed);
    }
    let interior: f64 = speeds[1..k - 1].iter().sum();
    Ok(dt * (0.5 * (speeds[0] + speeds[k - 1]) + interior))
}

/// Slack used by [`check_monotonicity`] for the Löwner chain and for the comparison.
pub const MONOTONICITY_TOL: f64 = 1e-10;

/// For a Löwner chain `P1 ≤ P2 ≤ P3`, whether `d(P1, P2) ≤ d(P1, P3)` in the affine metric.
pub fn check_monotonicity(p1: &SpdMatrix, p2: &SpdMatrix, p3: &SpdMatrix) -> Result<bool> {
    if !loewner_leq(p1, p2, MONOTONICITY_TOL)? || !loewner_leq(p2, p3, MONOTONICITY_TOL)? {
        return Err(Error::Precondition(
            "arguments do not form a Löwner chain".into(),
        ));
    }
    let near = AffineInvariant.distance(p1, p2)?;
    let far = AffineInvariant.distance(p1, p3)?;
    Ok(near <= far + MONOTONICITY_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::{congruence, random_invertible, random_spd, spd_log};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(p: f64) -> SpdMatrix {
        SpdMatrix::scalar(p).unwrap()
    }

    #[test]
    fn tokens_round_trip() {
        for k in MetricKind::ALL {
            assert_eq!(k.token().parse::<MetricKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.token())
            );
        }
        assert!("euclid".parse::<MetricKind>().is_err());
    }

    #[test]
    fn registry_lookup() {
        let registry = MetricRegistry::builtin();
        assert_eq!(
            registry.names().collect::<Vec<_>>(),
            vec!["affine", "flat-cov", "flat-info", "flat-sqrt"]
        );
        let m = registry.get("affine").unwrap();
        assert_eq!(m.kind(), MetricKind::AffineInvariant);
        assert!(registry.get("kl").is_none());
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_spd(&mut rng, 3, 1e6);
        for k in MetricKind::ALL {
            assert!(distance(k, &p, &p).unwrap() < 1e-12);
        }
        let i2 = SpdMatrix::identity(2);
        let e2 = SpdMatrix::diagonal(&[1f64.exp().powi(2); 2]).unwrap();
        assert_relative_eq!(
            distance(MetricKind::AffineInvariant, &i2, &e2).unwrap(),
            8f64.sqrt(),
            epsilon = 1e-14
        );
        let a = SpdMatrix::diagonal(&[1.0, 1.0]).unwrap();
        let b = SpdMatrix::diagonal(&[3.0, 1.0]).unwrap();
        assert_relative_eq!(distance(MetricKind::FlatCov, &a, &b).unwrap(), 2.0);
        assert_relative_eq!(
            distance(MetricKind::FlatInfo, &a, &b).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            distance(MetricKind::FlatSqrt, &a, &b).unwrap(),
            3f64.sqrt() - 1.0,
            epsilon = 1e-15
        );
        assert!(distance(MetricKind::FlatCov, &a, &SpdMatrix::identity(3)).is_err());
    }

    #[test]
    fn affine_distance_is_congruence_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for dim in 1..6 {
            let p1 = random_spd(&mut rng, dim, 1e4);
            let p2 = random_spd(&mut rng, dim, 1e4);
            let m = random_invertible(&mut rng, dim, 1e4);
            let before = distance(MetricKind::AffineInvariant, &p1, &p2).unwrap();
            let after = distance(
                MetricKind::AffineInvariant,
                &congruence(&m, &p1).unwrap(),
                &congruence(&m, &p2).unwrap(),
            )
            .unwrap();
            assert_relative_eq!(before, after, max_relative = 1e-8);
        }
    }

    #[test]
    fn affine_distance_to_identity_is_log_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..6 {
            let p = random_spd(&mut rng, dim, 1e6);
            let dist =
                distance(MetricKind::AffineInvariant, &SpdMatrix::identity(dim), &p).unwrap();
            assert_relative_eq!(
                dist.powi(2),
                spd_log(&p).frobenius_norm().powi(2),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn flat_cov_witness_is_not_affine_invariant() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let p = SpdMatrix::identity(2);
        let q = SpdMatrix::diagonal(&[2.0, 2.0]).unwrap();
        let before = distance(MetricKind::FlatCov, &p, &q).unwrap();
        let after = distance(
            MetricKind::FlatCov,
            &congruence(&m, &p).unwrap(),
            &congruence(&m, &q).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(after / before, 17f64.sqrt() / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn fisher_metric_examples() {
        let x = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, -3.0]]).unwrap();
        let id = SpdMatrix::identity(2);
        assert_relative_eq!(
            fisher_metric(&id, &x, &x).unwrap(),
            0.5 * x.frobenius_norm().powi(2),
            epsilon = 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_spd(&mut rng, 3, 1e4);
        assert_relative_eq!(
            fisher_metric(&p, &p.to_sym(), &p.to_sym()).unwrap(),
            1.5,
            epsilon = 1e-9
        );
        let one = SymMatrix::identity(1);
        assert_relative_eq!(fisher_metric(&d(2.0), &one, &one).unwrap(), 0.125);
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p1 = random_spd(&mut rng, 3, 1e4);
        let p2 = random_spd(&mut rng, 3, 1e4);
        assert_eq!(geodesic(&p1, &p2, 0.0).unwrap(), p1);
        assert_eq!(geodesic(&p1, &p2, 1.0).unwrap(), p2);
        assert_relative_eq!(
            geodesic(&d(1.0), &d(4.0), 0.5).unwrap().matrix()[(0, 0)],
            2.0,
            epsilon = 1e-14
        );
        let total = distance(MetricKind::AffineInvariant, &p1, &p2).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let g = geodesic(&p1, &p2, t).unwrap();
            let partial = distance(MetricKind::AffineInvariant, &p1, &g).unwrap();
            assert!((partial - t * total).abs() < 1e-8);
        }
        assert!(matches!(geodesic(&p1, &p2, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn curve_length_examples() {
        let p = d(3.0);
        assert_eq!(
            curve_length(MetricKind::AffineInvariant, &[p.clone(), p.clone(), p], 2.0).unwrap(),
            0.0
        );

        let k = 400;
        let scalar: Vec<_> = (0..k)
            .map(|i| geodesic(&d(1.0), &d(4.0), i as f64 / (k - 1) as f64).unwrap())
            .collect();
        let len = curve_length(MetricKind::AffineInvariant, &scalar, 2.0).unwrap();
        assert!((len - 4f64.ln()).abs() < 1e-3, "{len}");

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p1 = random_spd(&mut rng, 3, 1e3);
        let p2 = random_spd(&mut rng, 3, 1e3);
        let curve: Vec<_> = (0..k)
            .map(|i| geodesic(&p1, &p2, i as f64 / (k - 1) as f64).unwrap())
            .collect();
        let len = curve_length(MetricKind::AffineInvariant, &curve, 2.0).unwrap();
        let dist = distance(MetricKind::AffineInvariant, &p1, &p2).unwrap();
        assert!((len - dist).abs() < 1e-3, "{len} vs {dist}");

        // flat chart: a straight segment has length equal to the flat distance
        let line: Vec<_> = (0..50).map(|i| d(1.0 + 3.0 * i as f64 / 49.0)).collect();
        assert_relative_eq!(
            curve_length(MetricKind::FlatCov, &line, 2.0).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert!(curve_length(MetricKind::FlatCov, &line[..1], 2.0).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        let p = d(2.0);
        assert!(check_monotonicity(&p, &p, &p).unwrap());
        assert!(check_monotonicity(&d(1.0), &d(2.0), &d(4.0)).unwrap());
        assert!(matches!(
            check_monotonicity(&d(1.0), &d(4.0), &d(2.0)),
            Err(Error::Precondition(_))
        ));
    }
}
