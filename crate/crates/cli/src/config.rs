//! Structured configuration shared by every subcommand.
//!
//! A config file holds one section per subcommand; each command reads its own
//! section and echoes the whole resolved config into its outputs. Files ending
//! in `.json` are parsed as JSON, anything else as TOML. Unknown keys are
//! rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shinbo::datagen::SynthSpec;
use shinbo::experiment::{experiment_solver, Algorithm, Fundamental, SurrogateBatch, SyntheticBatch};
use shinbo::signal::{EnvsiOptions, StftParams};
use shinbo::SolverConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub run: RunConfig,
    pub mc: McConfig,
    pub eval: EvalConfig,
    /// Spectrogram parameters used by `run` on signals and by `stft`.
    pub stft: StftParams,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub spec: SynthSpec,
    /// Noise level applied to `X`; 0 writes the exact product.
    pub noise: f64,
}

/// Starting factors for `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Nndsvd,
    /// NNDSVD followed by `iters` unpenalized MU iterations.
    WarmStart { iters: usize },
    /// Truncated-Gaussian factors seeded by the solver seed.
    Random,
    Files { w: PathBuf, h: PathBuf },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::WarmStart { iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Nonnegative data matrix as CSV.
    pub input: Option<PathBuf>,
    /// Mono WAV or one-column CSV signal, turned into a spectrogram.
    pub signal: Option<PathBuf>,
    /// Sampling rate of a CSV signal.
    pub sample_rate: Option<f64>,
    pub algorithm: Algorithm,
    pub solver: SolverConfig,
    pub init: InitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            signal: None,
            sample_rate: None,
            algorithm: Algorithm::Shinbo,
            solver: experiment_solver(),
            init: InitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    #[default]
    Synthetic,
    Surrogate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub mode: McMode,
    pub synthetic: SyntheticBatch,
    pub surrogate: SurrogateBatch,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl McConfig {
    pub fn runs(&self) -> usize {
        match self.mode {
            McMode::Synthetic => self.synthetic.runs,
            McMode::Surrogate => self.surrogate.runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub w: Option<PathBuf>,
    pub h: Option<PathBuf>,
    pub w_true: Option<PathBuf>,
    pub h_true: Option<PathBuf>,
    /// Frames per second of the activations; enables the envelope indicator.
    pub frame_rate: Option<f64>,
    pub fundamental: Option<Fundamental>,
    pub envsi: EnvsiOptions,
    /// Sparsity threshold.
    pub tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            w: None,
            h: None,
            w_true: None,
            h_true: None,
            frame_rate: None,
            fundamental: None,
            envsi: EnvsiOptions::default(),
            tau: shinbo::experiment::SPARSITY_TAU,
        }
    }
}
