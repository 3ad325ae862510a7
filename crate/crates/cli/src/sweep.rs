use std::time::Instant;

use lgb_core::closed_form::{
    critical_prob_abs, critical_prob_cov, expected_p_opt, expected_p_pess, expected_sqrt_p_opt,
    expected_sqrt_p_pess, riemannian_mean_bound, ScalarSeriesResult,
};
use lgb_core::ifs::{derived_seed, stationary_samples, SampleSet};
use lgb_core::means::MeanRegistry;
use lgb_core::stats::mean_and_stderr;
use lgb_core::system::default_horizon;
use lgb_core::{MetricKind, Result as CoreResult, ScalarSystem, Symmetric};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{float, opt_float, Table};
use crate::Report;

pub const HEADER: [&str; 18] = [
    "gamma",
    "n",
    "metric",
    "mean_trace",
    "mean_logdet",
    "trace_stderr",
    "iterations",
    "residual",
    "converged",
    "diverged_flag",
    "runtime_ms",
    "expected_p_opt",
    "expected_p_pess",
    "expected_sqrtp_opt",
    "expected_sqrtp_pess",
    "gamma_c_cov",
    "gamma_c_abs",
    "riemannian_mean_bound",
];

/// Per-γ̄ columns that do not depend on the samples.
struct ClosedForm {
    cells: [String; 7],
}

fn series_cell(r: CoreResult<ScalarSeriesResult>) -> String {
    r.map(|r| r.value.to_string()).unwrap_or_default()
}

fn closed_form(cfg: &ExperimentConfig, horizon: Option<usize>, gamma: f64) -> ClosedForm {
    let bound = horizon
        .and_then(|n| riemannian_mean_bound(&cfg.model, n, gamma, cfg.series_tol).ok())
        .map(|r| r.value.to_string())
        .unwrap_or_default();
    let scalar = ScalarSystem::from_model(&cfg.model).ok();
    let cells = match scalar {
        Some(sys) => [
            series_cell(expected_p_opt(&sys, gamma)),
            series_cell(expected_p_pess(&sys, gamma)),
            series_cell(expected_sqrt_p_opt(&sys, gamma, cfg.series_tol)),
            series_cell(expected_sqrt_p_pess(&sys, gamma, cfg.series_tol)),
            opt_float(critical_prob_cov(sys.a).ok()),
            opt_float(critical_prob_abs(sys.a).ok()),
            bound,
        ],
        None => [
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            bound,
        ],
    };
    ClosedForm { cells }
}

/// One `(N, metric)` cell computed from the first `n` draws.
fn cell(
    cfg: &ExperimentConfig,
    registry: &MeanRegistry,
    set: &SampleSet,
    n: usize,
    kind: MetricKind,
) -> (Vec<String>, bool) {
    let start = Instant::now();
    let estimate = if set.len() < n {
        None
    } else {
        let draws = &set.draws[..n];
        let estimator = registry
            .get(kind)
            .expect("builtin registry covers every metric");
        estimator.estimate(draws, None).ok().map(|r| {
            let logdet = r.mean.log_det();
            let stderr = if kind == MetricKind::FlatCov {
                let traces: Vec<f64> = draws.iter().map(|d| d.trace()).collect();
                Some(mean_and_stderr(&traces).1)
            } else {
                None
            };
            (r, logdet, stderr)
        })
    };
    let runtime = if cfg.timings {
        format!("{}", start.elapsed().as_millis())
    } else {
        String::new()
    };
    match estimate {
        Some((r, logdet, stderr)) => (
            vec![
                float(r.mean.trace()),
                float(logdet),
                opt_float(stderr),
                r.iterations.to_string(),
                float(r.residual),
                u8::from(r.converged).to_string(),
                "0".into(),
                runtime,
            ],
            true,
        ),
        None => (
            vec![
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "1".into(),
                runtime,
            ],
            false,
        ),
    }
}

/// γ̄ × N × metric table. Each γ̄ uses seed `base ^ index` and one run whose
/// prefixes give the smaller rungs, so rows are independent of scheduling.
/// A table row and whether its mean was computed.
type Row = (Vec<String>, bool);

pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.require_positive_gamma()?;
    lgb_core::system::steady_state(&cfg.model)
        .map_err(|e| CliError::Usage(format!("model: {e}")))?;
    let horizon = cfg.n_horizon.or_else(|| default_horizon(&cfg.model).ok());
    let registry = MeanRegistry::builtin(cfg.karcher);
    let max_n = *cfg.ladder.last().expect("ladder is non-empty");

    let pool = cfg.thread_pool()?;
    let blocks: Vec<Result<Vec<Row>, CliError>> = pool.install(|| {
        cfg.gamma
            .par_iter()
            .enumerate()
            .map(|(gi, &gamma)| {
                let set = stationary_samples(
                    &cfg.model,
                    gamma,
                    cfg.burn_in,
                    max_n,
                    cfg.stride,
                    derived_seed(cfg.seed, gi as u64),
                )?;
                let fixed = closed_form(cfg, horizon, gamma);
                let cells: Vec<(usize, MetricKind)> = cfg
                    .ladder
                    .iter()
                    .flat_map(|&n| cfg.metrics.iter().map(move |&k| (n, k)))
                    .collect();
                Ok(cells
                    .par_iter()
                    .map(|&(n, kind)| {
                        let (values, ok) = cell(cfg, &registry, &set, n, kind);
                        let mut row = vec![float(gamma), n.to_string(), kind.token().to_string()];
                        row.extend(values);
                        row.extend(fixed.cells.iter().cloned());
                        (row, ok)
                    })
                    .collect())
            })
            .collect()
    });

    let mut table = Table::new("lgb-sweep", &HEADER);
    let mut any_ok = false;
    for block in blocks {
        for (row, ok) in block? {
            any_ok |= ok;
            table.row(&row);
        }
    }
    Ok(Report {
        text: table.finish(),
        failure: (!any_ok).then(|| "every sweep cell failed".to_string()),
    })
}
