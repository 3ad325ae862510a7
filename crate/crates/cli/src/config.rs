use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use lgb_core::ifs::{DEFAULT_BURN_IN, DEFAULT_STRIDE};
use lgb_core::means::KarcherOptions;
use lgb_core::{MetricKind, SystemModel};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_STEPS: usize = 1_000;
pub const DEFAULT_PAIRS: usize = 1_000;
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
/// Smallest rung of the doubling sample-size ladder.
pub const LADDER_START: usize = 1_000;

/// A matrix given either as a bare number (1×1) or as nested rows.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn rows(&self) -> Vec<Vec<f64>> {
        match self {
            MatrixValue::Scalar(x) => vec![vec![*x]],
            MatrixValue::Rows(r) => r.clone(),
        }
    }
}

/// Contents of a JSON config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub a: Option<MatrixValue>,
    pub b: Option<MatrixValue>,
    pub c: Option<MatrixValue>,
    pub gamma: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub stride: Option<usize>,
    pub ladder: Option<Vec<usize>>,
    pub metrics: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub series_tol: Option<f64>,
    pub n_horizon: Option<usize>,
    pub steps: Option<usize>,
    pub p0: Option<f64>,
    pub pairs: Option<usize>,
    pub workers: Option<usize>,
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Arrival probabilities, comma separated [default: 0.5,0.7,0.9]
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Base seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stationary draws N (largest rung of the sweep ladder) [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Steps discarded before the first draw [default: 1000]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Steps between consecutive draws [default: 10]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Metrics: flat-cov, flat-info, flat-sqrt, affine [default: all]
    #[arg(long, value_delimiter = ',')]
    pub metric: Option<Vec<String>>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Karcher mean tolerance [default: 1e-10]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Horizon n of the power IFS [default: observability index]
    #[arg(long)]
    pub n_horizon: Option<usize>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Fill the runtime_ms column (makes output timing dependent)
    #[arg(long)]
    pub timings: bool,
}

/// Fully validated settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: SystemModel,
    pub gamma: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
    pub burn_in: usize,
    pub stride: usize,
    pub ladder: Vec<usize>,
    pub metrics: Vec<MetricKind>,
    pub out: Option<PathBuf>,
    pub karcher: KarcherOptions,
    pub series_tol: f64,
    pub n_horizon: Option<usize>,
    pub steps: usize,
    pub p0: f64,
    pub pairs: usize,
    pub workers: Option<usize>,
    pub timings: bool,
}

/// Observable, controllable 2×2 system with an unstable mode.
pub fn default_model() -> SystemModel {
    SystemModel::from_rows(
        &[vec![1.2, 0.5], vec![0.0, 0.9]],
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![1.0, 0.0]],
    )
    .expect("default model is well formed")
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Doubling ladder `LADDER_START, 2·LADDER_START, …` capped by and ending at `samples`.
pub fn doubling_ladder(samples: usize) -> Vec<usize> {
    let mut ladder = Vec::new();
    let mut n = LADDER_START;
    while n < samples {
        ladder.push(n);
        n *= 2;
    }
    ladder.push(samples);
    ladder
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Merges the file (if any) with the flags and validates the result.
pub fn parse_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let file = match &args.config {
        Some(path) => read_file(path)?,
        None => FileConfig::default(),
    };

    let model = match (&file.a, &file.b, &file.c) {
        (None, None, None) => default_model(),
        (Some(a), Some(b), Some(c)) => SystemModel::from_rows(&a.rows(), &b.rows(), &c.rows())
            .map_err(|e| usage(format!("model: {e}")))?,
        _ => return Err(usage("model: give all of a, b, c or none of them")),
    };

    let gamma = args
        .gamma
        .clone()
        .or(file.gamma)
        .unwrap_or_else(|| vec![0.5, 0.7, 0.9]);
    if gamma.is_empty() {
        return Err(usage("gamma: at least one value required"));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g >= 0.0 && **g <= 1.0)) {
        return Err(usage(format!("gamma: {g} outside [0, 1]")));
    }

    let samples = args.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        return Err(usage("samples: must be at least 1"));
    }
    let stride = args.stride.or(file.stride).unwrap_or(DEFAULT_STRIDE);
    if stride == 0 {
        return Err(usage("stride: must be at least 1"));
    }
    let ladder = match file.ladder {
        Some(mut l) if args.samples.is_none() => {
            if l.is_empty() || l.contains(&0) {
                return Err(usage("ladder: sample sizes must be at least 1"));
            }
            l.sort_unstable();
            l.dedup();
            l
        }
        _ => doubling_ladder(samples),
    };
    let samples = *ladder.last().expect("ladder is non-empty");

    let names = args.metric.clone().or(file.metrics);
    let metrics = match names {
        None => MetricKind::ALL.to_vec(),
        Some(names) => {
            let mut kinds = Vec::new();
            for name in names {
                let kind: MetricKind = name
                    .parse()
                    .map_err(|_| usage(format!("metric: unknown metric {name:?}")))?;
                if !kinds.contains(&kind) {
                    kinds.push(kind);
                }
            }
            if kinds.is_empty() {
                return Err(usage("metric: at least one metric required"));
            }
            kinds
        }
    };

    let mut karcher = KarcherOptions::default();
    if let Some(tol) = args.tol.or(file.tol) {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(usage(format!("tol: {tol} must be positive")));
        }
        karcher.tol = tol;
    }
    let series_tol = file.series_tol.unwrap_or(DEFAULT_SERIES_TOL);
    if !(series_tol > 0.0 && series_tol.is_finite()) {
        return Err(usage(format!("series_tol: {series_tol} must be positive")));
    }
    let n_horizon = args.n_horizon.or(file.n_horizon);
    if n_horizon == Some(0) {
        return Err(usage("n_horizon: must be at least 1"));
    }
    let p0 = file.p0.unwrap_or(1.0);
    if !(p0 > 0.0 && p0.is_finite()) {
        return Err(usage(format!("p0: {p0} must be positive")));
    }
    let workers = args.workers.or(file.workers);
    if workers == Some(0) {
        return Err(usage("workers: must be at least 1"));
    }
    let pairs = file.pairs.unwrap_or(DEFAULT_PAIRS);
    if pairs == 0 {
        return Err(usage("pairs: must be at least 1"));
    }

    Ok(ExperimentConfig {
        model,
        gamma,
        seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        samples,
        burn_in: args.burn_in.or(file.burn_in).unwrap_or(DEFAULT_BURN_IN),
        stride,
        ladder,
        metrics,
        out: args.out.clone().or(file.out),
        karcher,
        series_tol,
        n_horizon,
        steps: file.steps.unwrap_or(DEFAULT_STEPS),
        p0,
        pairs,
        workers,
        timings: args.timings,
    })
}

impl ExperimentConfig {
    /// Rejects `γ̄ = 0`, which only `simulate` accepts.
    pub fn require_positive_gamma(&self) -> Result<(), CliError> {
        match self.gamma.iter().find(|g| **g <= 0.0) {
            Some(g) => Err(usage(format!("gamma: {g} outside (0, 1]"))),
            None => Ok(()),
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| CliError::Failure(format!("thread pool: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_file(json: &str) -> (tempfile::TempDir, CommonArgs) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, json).unwrap();
        let args = CommonArgs {
            config: Some(path),
            ..CommonArgs::default()
        };
        (dir, args)
    }

    #[test]
    fn minimal_scalar_config() {
        let (_d, args) = with_file(r#"{"a": 2, "b": 1, "c": 1, "gamma": [0.8]}"#);
        let cfg = parse_config(&args).unwrap();
        assert!(cfg.model.is_scalar());
        assert_eq!(cfg.gamma, vec![0.8]);
        assert_eq!(cfg.seed, DEFAULT_SEED);
    }

    #[test]
    fn out_of_range_gamma_is_rejected() {
        let (_d, args) = with_file(r#"{"gamma": [1.5]}"#);
        assert!(matches!(parse_config(&args), Err(CliError::Usage(_))));
    }

    #[test]
    fn flags_override_file() {
        let (_d, mut args) = with_file(r#"{"a": 2, "b": 1, "c": 1, "gamma": [0.8], "seed": 7}"#);
        args.gamma = Some(vec![0.5]);
        let cfg = parse_config(&args).unwrap();
        assert_eq!(cfg.gamma, vec![0.5]);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_keys_and_bad_json_are_usage_errors() {
        let (_d, args) = with_file(r#"{"gama": [0.5]}"#);
        let err = parse_config(&args).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        let (_d, args) = with_file("{\n  \"gamma\": [0.5,\n}");
        let err = parse_config(&args).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn partial_model_is_rejected() {
        let (_d, args) = with_file(r#"{"a": 2}"#);
        assert!(parse_config(&args).is_err());
    }

    #[test]
    fn ladder_doubles_up_to_samples() {
        assert_eq!(doubling_ladder(5000), vec![1000, 2000, 4000, 5000]);
        assert_eq!(doubling_ladder(300), vec![300]);
        assert_eq!(doubling_ladder(2000), vec![1000, 2000]);
    }

    #[test]
    fn default_model_is_observable_and_invertible() {
        let report = lgb_core::system::validate(&default_model());
        assert!(report.observable && report.controllable && report.a_invertible);
        assert_eq!(report.observability_index, Some(2));
    }
}
