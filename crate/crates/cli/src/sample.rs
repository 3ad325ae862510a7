use lgb_core::ifs::{stationary_samples, write_samples_jsonl};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::Report;

/// Stationary draws as JSON lines, readable by `means`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.require_positive_gamma()?;
    let [gamma] = cfg.gamma[..] else {
        return Err(CliError::Usage("sample takes exactly one gamma".into()));
    };
    let set = stationary_samples(
        &cfg.model,
        gamma,
        cfg.burn_in,
        cfg.samples,
        cfg.stride,
        cfg.seed,
    )?;
    let mut buf = Vec::new();
    write_samples_jsonl(&set, &mut buf)?;
    let failure = set
        .overflow
        .map(|k| format!("overflow at step {k}; {} draws written", set.len()));
    Ok(Report {
        text: String::from_utf8(buf).expect("JSON is UTF-8"),
        failure,
    })
}
