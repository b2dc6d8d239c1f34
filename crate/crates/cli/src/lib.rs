//! Command-line front end: data generation, single runs, Monte-Carlo
//! batches, evaluation of persisted factors and spectrogram export.
//!
//! Exit codes: 0 on completion, 1 for unreadable or malformed input files,
//! 2 for numeric failure inside a solver, 3 for configuration or argument
//! errors.

pub mod args;
mod commands;
pub mod config;
pub mod io;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use commands::*;
pub use config::ExperimentConfig;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] shinbo::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Input(_) => 1,
            CliError::Core(shinbo::Error::Numeric { .. }) => 2,
            CliError::Core(_) | CliError::Config(_) => 3,
        }
    }
}

/// Loads the config named by `--config` (defaults otherwise), applies the
/// subcommand's flags and runs it.
pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => {
            a.apply(&mut cfg);
            cmd_gen(&cfg, &a.out)?;
        }
        Command::Run(a) => {
            a.apply(&mut cfg);
            let report = cmd_run(&cfg, &a.out)?;
            eprintln!(
                "{}: {} iterations, converged {}",
                report.algorithm, report.iterations, report.converged
            );
        }
        Command::Mc(a) => {
            a.apply(&mut cfg);
            let bundle = cmd_mc(&cfg, &a.out)?;
            if bundle.partial {
                let failed = bundle.rows.iter().filter(|r| r.error.is_some()).count();
                eprintln!("warning: {failed} runs failed; results are partial");
            }
        }
        Command::Eval(a) => {
            a.apply(&mut cfg);
            let report = cmd_eval(&cfg)?;
            let text = io::to_json(&report)?;
            match &a.out {
                Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e))?,
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
            }
        }
        Command::Stft(a) => {
            a.params.apply(&mut cfg);
            cmd_stft(&cfg, &a.signal, a.sample_rate, &a.out)?;
        }
    }
    Ok(())
}
