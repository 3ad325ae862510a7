//! Batch command line for the lossy-link covariance toolkit.
//!
//! Every command prints CSV (or JSON lines for `sample`) whose first line is
//! a schema tag. Exit codes: 0 success, 1 computation or audit failure,
//! 2 usage or config error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod check;
pub mod config;
pub mod error;
pub mod means;
pub mod sample;
pub mod simulate;
pub mod sweep;
pub mod table;

pub use config::{parse_config, CommonArgs, ExperimentConfig};
pub use error::CliError;

/// Output of a command. `failure` is set when the text is complete but the
/// run should exit with status 1.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub failure: Option<String>,
}

#[derive(Debug, Parser)]
#[command(
    name = "lgb",
    version,
    about = "Covariance statistics of Kalman filtering with random measurement loss"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Means of stationary draws over a grid of arrival rates and sample sizes
    Sweep(CommonArgs),
    /// The four means of a JSON-lines sample file
    Means {
        /// Sample file written by `lgb sample`
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Audit metric axioms, invariances and contraction of the Riccati maps
    Check(CommonArgs),
    /// One trajectory of the covariance chain
    Simulate(CommonArgs),
    /// Stationary draws as JSON lines
    Sample(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Sweep(c) | Command::Check(c) | Command::Simulate(c) | Command::Sample(c) => c,
            Command::Means { common, .. } => common,
        }
    }
}

/// Parses the config, checks the output path, runs the command and writes its output.
pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<Option<String>, CliError> {
    let cfg = parse_config(command.common())?;
    if let Some(path) = &cfg.out {
        fs::File::create(path)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let report = match command {
        Command::Sweep(_) => sweep::run(&cfg)?,
        Command::Means { input, .. } => means::run(&cfg, input)?,
        Command::Check(_) => check::run(&cfg)?,
        Command::Simulate(_) => simulate::run(&cfg)?,
        Command::Sample(_) => sample::run(&cfg)?,
    };
    match &cfg.out {
        Some(path) => fs::write(path, &report.text)?,
        None => match stdout
            .write_all(report.text.as_bytes())
            .and_then(|_| stdout.flush())
        {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            other => other?,
        },
    }
    Ok(report.failure)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command, stdout) {
        Ok(None) => 0,
        Ok(Some(failure)) => {
            let _ = writeln!(stderr, "lgb: {failure}");
            1
        }
        Err(e) => {
            let _ = writeln!(stderr, "lgb: {e}");
            e.exit_code()
        }
    }
}
