use lgb_core::ifs::{run_ifs, sample_arrivals};
use lgb_core::metrics::distance;
use lgb_core::system::steady_state;
use lgb_core::{MetricKind, SpdMatrix, Symmetric};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{float, Table};
use crate::Report;

pub const HEADER: [&str; 5] = ["k", "arrival_bit", "trace", "logdet", "d_affine_to_pinf"];

/// One trajectory from `P0 = p0 · I`. Row `k` is the state after `k` steps
/// and carries the bit that produced it. The file ends with
/// `#end,reason=complete` or `#end,reason=overflow`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let [gamma] = cfg.gamma[..] else {
        return Err(CliError::Usage("simulate takes exactly one gamma".into()));
    };
    let arrivals = sample_arrivals(gamma, cfg.steps, cfg.seed)?;
    let dim = cfg.model.dim();
    let p0 = SpdMatrix::identity(dim).scale(cfg.p0)?;
    let trajectory = run_ifs(&cfg.model, &arrivals, &p0)?;
    let p_inf = steady_state(&cfg.model).ok();

    let mut table = Table::new("lgb-simulate", &HEADER);
    for (k, p) in trajectory.covariances.iter().enumerate() {
        let bit = if k == 0 {
            String::new()
        } else {
            arrivals.bits[k - 1].to_string()
        };
        let d = p_inf
            .as_ref()
            .and_then(|p_inf| distance(MetricKind::AffineInvariant, p_inf, p).ok())
            .map(float)
            .unwrap_or_default();
        table.row(&[k.to_string(), bit, float(p.trace()), float(p.log_det()), d]);
    }
    let reason = match trajectory.overflow {
        Some(_) => "overflow",
        None => "complete",
    };
    table.comment(&format!("end,reason={reason}"));
    Ok(Report {
        text: table.finish(),
        failure: None,
    })
}
