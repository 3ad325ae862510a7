use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use lgb_core::ifs::{read_samples_jsonl, SampleSet};
use lgb_core::means::{karcher_mean, KarcherOptions, MeanRegistry, MeanResult};
use lgb_core::spd::{loewner_leq, spd_inv};
use lgb_core::{MetricKind, Result as CoreResult, SpdMatrix, Symmetric};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{float, Table};
use crate::Report;

pub const HEADER: [&str; 7] = [
    "metric",
    "iterations",
    "residual",
    "converged",
    "trace",
    "logdet",
    "matrix",
];

/// Tolerance of the harmonic ≤ sqrt ≤ arithmetic check.
pub const LOEWNER_TOL: f64 = 1e-9;

pub fn load(path: &Path) -> Result<SampleSet, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let set = read_samples_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if set.is_empty() {
        return Err(CliError::Usage(format!("{}: no samples", path.display())));
    }
    Ok(set)
}

/// `‖𝕄{P⁻¹}⁻¹ − 𝕄{P}‖_F / ‖𝕄{P}‖_F` for the Karcher mean.
pub fn duality_residual(
    draws: &[SpdMatrix],
    karcher: &SpdMatrix,
    options: KarcherOptions,
) -> CoreResult<f64> {
    let inverses = draws.iter().map(spd_inv).collect::<CoreResult<Vec<_>>>()?;
    let dual = spd_inv(&karcher_mean(&inverses, options)?.mean)?;
    Ok((dual.matrix() - karcher.matrix()).norm() / karcher.frobenius_norm())
}

/// `harmonic ≤ sqrt ≤ arithmetic` in the Löwner order.
pub fn loewner_chain(
    harmonic: &SpdMatrix,
    sqrt: &SpdMatrix,
    arithmetic: &SpdMatrix,
) -> CoreResult<bool> {
    Ok(loewner_leq(harmonic, sqrt, LOEWNER_TOL)? && loewner_leq(sqrt, arithmetic, LOEWNER_TOL)?)
}

fn matrix_cell(m: &SpdMatrix) -> String {
    m.to_row_major()
        .into_iter()
        .map(float)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The four means of a stored sample set with solver diagnostics, the Löwner
/// chain and the Karcher inversion-duality residual.
pub fn run(cfg: &ExperimentConfig, input: &Path) -> Result<Report, CliError> {
    let set = load(input)?;
    let registry = MeanRegistry::builtin(cfg.karcher);
    let pool = cfg.thread_pool()?;
    let results: Vec<(MetricKind, CoreResult<MeanResult>)> = pool.install(|| {
        MetricKind::ALL
            .iter()
            .map(|&k| {
                (
                    k,
                    registry.get(k).expect("builtin").estimate(&set.draws, None),
                )
            })
            .collect()
    });

    let mut table = Table::new("lgb-means", &HEADER);
    let found = |kind: MetricKind| -> Option<SpdMatrix> {
        results
            .iter()
            .find(|(k, _)| *k == kind)
            .and_then(|(_, r)| r.as_ref().ok().map(|r| r.mean.clone()))
    };
    for (kind, result) in &results {
        let row = match result {
            Ok(r) => vec![
                kind.token().to_string(),
                r.iterations.to_string(),
                float(r.residual),
                u8::from(r.converged).to_string(),
                float(r.mean.trace()),
                float(r.mean.log_det()),
                matrix_cell(&r.mean),
            ],
            Err(e) => {
                table.comment(&format!("error,{},{e}", kind.token()));
                vec![
                    kind.token().to_string(),
                    String::new(),
                    String::new(),
                    "0".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]
            }
        };
        table.row(&row);
    }

    let chain = match (
        found(MetricKind::FlatInfo),
        found(MetricKind::FlatSqrt),
        found(MetricKind::FlatCov),
    ) {
        (Some(h), Some(s), Some(a)) => match loewner_chain(&h, &s, &a)? {
            true => "pass",
            false => "fail",
        },
        _ => "unavailable",
    };
    table.comment(&format!("loewner_chain,{chain}"));
    let duality = found(MetricKind::AffineInvariant).and_then(|k| {
        pool.install(|| duality_residual(&set.draws, &k, cfg.karcher))
            .ok()
    });
    table.comment(&format!(
        "duality_residual,{}",
        duality.map(float).unwrap_or_else(|| "unavailable".into())
    ));
    Ok(Report {
        text: table.finish(),
        failure: None,
    })
}
