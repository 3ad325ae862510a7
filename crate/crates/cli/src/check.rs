use lgb_core::ifs::{average_contractivity, estimate_lipschitz, RiccatiMap, MAX_BLOCK};
use lgb_core::metrics::{check_monotonicity, distance};
use lgb_core::spd::{congruence, loewner_leq, random_invertible, random_spd, spd_inv};
use lgb_core::system::{map_g, map_h, validate};
use lgb_core::{MetricKind, Result as CoreResult, SpdMatrix, Symmetric};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{float, Table};
use crate::Report;

pub const HEADER: [&str; 5] = ["property", "status", "margin", "threshold", "detail"];

pub const IDENTITY_TOL: f64 = 1e-10;
pub const TRIANGLE_TOL: f64 = 1e-9;
pub const INVARIANCE_TOL: f64 = 1e-8;
pub const LIPSCHITZ_SLACK: f64 = 1e-10;
/// Condition-number cap for the random test matrices.
const MAX_COND: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    fn token(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }
}

/// One audited property with its measured margin.
#[derive(Debug, Clone)]
pub struct Finding {
    pub property: String,
    pub status: Status,
    pub margin: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Finding {
    fn at_most(property: String, margin: f64, threshold: f64) -> Self {
        Self {
            property,
            status: if margin <= threshold {
                Status::Pass
            } else {
                Status::Fail
            },
            margin: Some(margin),
            threshold: Some(threshold),
            detail: String::new(),
        }
    }

    fn below(property: String, margin: f64, threshold: f64) -> Self {
        Self {
            status: if margin < threshold {
                Status::Pass
            } else {
                Status::Fail
            },
            ..Self::at_most(property, margin, threshold)
        }
    }

    fn skipped(property: String, detail: impl Into<String>) -> Self {
        Self {
            property,
            status: Status::Skipped,
            margin: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    fn errored(property: String, e: lgb_core::Error) -> Self {
        Self {
            property,
            status: Status::Fail,
            margin: None,
            threshold: None,
            detail: e.to_string().replace(',', ";"),
        }
    }
}

fn triples(dim: usize, count: usize, seed: u64) -> Vec<[SpdMatrix; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            [
                random_spd(&mut rng, dim, MAX_COND),
                random_spd(&mut rng, dim, MAX_COND),
                random_spd(&mut rng, dim, MAX_COND),
            ]
        })
        .collect()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn axioms(kind: MetricKind, sets: &[[SpdMatrix; 3]]) -> CoreResult<[f64; 3]> {
    let (mut symmetry, mut identity, mut triangle) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for [p1, p2, p3] in sets {
        let d12 = distance(kind, p1, p2)?;
        symmetry = symmetry.max((d12 - distance(kind, p2, p1)?).abs());
        identity = identity.max(distance(kind, p1, p1)?);
        let excess = distance(kind, p1, p3)? - d12 - distance(kind, p2, p3)?;
        triangle = triangle.max(excess);
    }
    Ok([symmetry, identity, triangle])
}

fn affine_invariance(sets: &[[SpdMatrix; 3]], seed: u64) -> CoreResult<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut congruent, mut inverted) = (0.0f64, 0.0f64);
    for [p1, p2, _] in sets {
        let d = distance(MetricKind::AffineInvariant, p1, p2)?;
        let t = random_invertible(&mut rng, p1.dim(), MAX_COND);
        let moved = distance(
            MetricKind::AffineInvariant,
            &congruence(&t, p1)?,
            &congruence(&t, p2)?,
        )?;
        congruent = congruent.max(relative(moved, d));
        let inv = distance(MetricKind::AffineInvariant, &spd_inv(p1)?, &spd_inv(p2)?)?;
        inverted = inverted.max(relative(inv, d));
    }
    Ok([congruent, inverted])
}

/// `d(T P1 Tᵀ, T P2 Tᵀ) / d(P1, P2)` for the flat-cov metric on a fixed witness.
fn flat_cov_witness_ratio(dim: usize) -> CoreResult<f64> {
    let p1 = SpdMatrix::identity(dim);
    let p2 = SpdMatrix::identity(dim).scale(2.0)?;
    let mut t = DMatrix::identity(dim, dim);
    t[(0, 0)] = 2.0;
    let before = distance(MetricKind::FlatCov, &p1, &p2)?;
    let after = distance(
        MetricKind::FlatCov,
        &congruence(&t, &p1)?,
        &congruence(&t, &p2)?,
    )?;
    Ok(after / before)
}

/// Violations of `d(P1, P2) ≤ d(P1, P3)` over chains `P1 ≤ P2 ≤ P3`.
fn monotonicity_violations(sets: &[[SpdMatrix; 3]]) -> CoreResult<usize> {
    let mut violations = 0;
    for [p1, s1, s2] in sets {
        let p2 = SpdMatrix::new(p1.matrix() + s1.matrix())?;
        let p3 = SpdMatrix::new(p2.matrix() + s2.matrix())?;
        if !check_monotonicity(p1, &p2, &p3)? {
            violations += 1;
        }
    }
    Ok(violations)
}

fn g_below_h(cfg: &ExperimentConfig, sets: &[[SpdMatrix; 3]]) -> CoreResult<usize> {
    let mut violations = 0;
    for [p, _, _] in sets {
        if !loewner_leq(&map_g(&cfg.model, p)?, &map_h(&cfg.model, p)?, 1e-9)? {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Runs every audit on the configured model.
pub fn audit(cfg: &ExperimentConfig) -> Vec<Finding> {
    let dim = cfg.model.dim();
    let sets = triples(dim, cfg.pairs, cfg.seed);
    let mut findings = Vec::new();

    for kind in MetricKind::ALL {
        let name = kind.token();
        match axioms(kind, &sets) {
            Ok([symmetry, identity, triangle]) => {
                findings.push(Finding::at_most(format!("symmetry/{name}"), symmetry, 0.0));
                findings.push(Finding::at_most(
                    format!("identity/{name}"),
                    identity,
                    IDENTITY_TOL,
                ));
                findings.push(Finding::at_most(
                    format!("triangle/{name}"),
                    triangle,
                    TRIANGLE_TOL,
                ));
            }
            Err(e) => findings.push(Finding::errored(format!("axioms/{name}"), e)),
        }
    }

    match affine_invariance(&sets, cfg.seed.wrapping_add(1)) {
        Ok([congruent, inverted]) => {
            findings.push(Finding::at_most(
                "congruence_invariance/affine".into(),
                congruent,
                INVARIANCE_TOL,
            ));
            findings.push(Finding::at_most(
                "inversion_invariance/affine".into(),
                inverted,
                INVARIANCE_TOL,
            ));
        }
        Err(e) => findings.push(Finding::errored("invariance/affine".into(), e)),
    }

    match flat_cov_witness_ratio(dim) {
        Ok(ratio) => findings.push(Finding {
            property: "congruence_witness/flat-cov".into(),
            status: if (ratio - 1.0).abs() > INVARIANCE_TOL {
                Status::Pass
            } else {
                Status::Fail
            },
            margin: Some(ratio),
            threshold: Some(1.0),
            detail: "expected ratio != 1".into(),
        }),
        Err(e) => findings.push(Finding::errored("congruence_witness/flat-cov".into(), e)),
    }

    match monotonicity_violations(&sets) {
        Ok(v) => findings.push(Finding::at_most(
            "monotonicity/affine".into(),
            v as f64,
            0.0,
        )),
        Err(e) => findings.push(Finding::errored("monotonicity/affine".into(), e)),
    }

    match g_below_h(cfg, &sets) {
        Ok(v) => findings.push(Finding::at_most("order/g_le_h".into(), v as f64, 0.0)),
        Err(e) => findings.push(Finding::errored("order/g_le_h".into(), e)),
    }

    contraction_audit(cfg, &mut findings);
    findings
}

fn contraction_audit(cfg: &ExperimentConfig, findings: &mut Vec<Finding>) {
    let report = validate(&cfg.model);
    let metric = MetricKind::AffineInvariant;
    let properties = ["nonexpansive/h", "nonexpansive/g", "contraction/g^n"];
    if !report.a_invertible {
        for p in properties {
            findings.push(Finding::skipped(p.into(), "A is singular"));
        }
        findings.push(Finding::skipped(
            "average_contractivity".into(),
            "A is singular",
        ));
        return;
    }
    let seed = cfg.seed.wrapping_add(2);
    let lip_h = estimate_lipschitz(&RiccatiMap::H, &cfg.model, metric, cfg.pairs, seed);
    findings.push(Finding::at_most(
        properties[0].into(),
        lip_h,
        1.0 + LIPSCHITZ_SLACK,
    ));
    let lip_g = estimate_lipschitz(&RiccatiMap::G, &cfg.model, metric, cfg.pairs, seed);
    findings.push(Finding::at_most(
        properties[1].into(),
        lip_g,
        1.0 + LIPSCHITZ_SLACK,
    ));

    let Some(n) = cfg.n_horizon.or(report.observability_index) else {
        findings.push(Finding::skipped(
            properties[2].into(),
            "(A, C) not observable",
        ));
        findings.push(Finding::skipped(
            "average_contractivity".into(),
            "(A, C) not observable",
        ));
        return;
    };
    let lip_gn = estimate_lipschitz(&RiccatiMap::GPower(n), &cfg.model, metric, cfg.pairs, seed);
    let mut f = Finding::below(properties[2].into(), lip_gn, 1.0);
    f.detail = format!("n={n}");
    findings.push(f);

    for &gamma in &cfg.gamma {
        let property = format!("average_contractivity/gamma={gamma}");
        if n > MAX_BLOCK {
            findings.push(Finding::skipped(
                property,
                format!("block length {n} above {MAX_BLOCK}"),
            ));
            continue;
        }
        match average_contractivity(&cfg.model, gamma, metric, cfg.pairs, seed, n) {
            Ok(v) => {
                let mut f = Finding::below(property, v, 0.0);
                f.detail = format!("block={n}");
                findings.push(f);
            }
            Err(e) => findings.push(Finding::errored(property, e)),
        }
    }
}

/// Property audit table; fails when any property fails.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.require_positive_gamma()?;
    let pool = cfg.thread_pool()?;
    let findings = pool.install(|| audit(cfg));
    let mut table = Table::new("lgb-check", &HEADER);
    let mut failed = Vec::new();
    for f in &findings {
        if f.status == Status::Fail {
            failed.push(f.property.clone());
        }
        table.row(&[
            f.property.clone(),
            f.status.token().into(),
            f.margin.map(float).unwrap_or_default(),
            f.threshold.map(float).unwrap_or_default(),
            f.detail.clone(),
        ]);
    }
    Ok(Report {
        text: table.finish(),
        failure: (!failed.is_empty()).then(|| format!("failed properties: {}", failed.join(" "))),
    })
}
