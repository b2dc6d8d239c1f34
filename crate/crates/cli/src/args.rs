//! Command-line flags. Every flag overrides one field of the loaded
//! [`ExperimentConfig`]; unset flags leave the config untouched.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shinbo::experiment::{Algorithm, Fundamental};
use shinbo::signal::SpectrogramScale;
use shinbo::{JacobianMode, WUpdateRule};

use crate::config::{ExperimentConfig, InitConfig, McMode};

#[derive(Debug, Parser)]
#[command(name = "shinbo", version, about = "Sparse IS-NMF with automatic row-wise penalty tuning")]
pub struct Cli {
    /// TOML or JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate sparse ground-truth factors and their product.
    Gen(GenArgs),
    /// Factorize a data matrix or the spectrogram of a signal.
    Run(RunArgs),
    /// Seeded Monte-Carlo comparison of the baselines and the bi-level solver.
    Mc(McArgs),
    /// Score persisted factors.
    Eval(EvalArgs),
    /// Power spectrogram of a signal.
    Stft(StftArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub density_w: Option<f64>,
    #[arg(long)]
    pub density_h: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgorithmArg {
    Mu,
    Shinbo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Nndsvd,
    WarmStart,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WRuleArg {
    PaperEuclidean,
    IsDivergence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JacobianArg {
    Exact,
    Diagonal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Synthetic,
    Surrogate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Power,
    Magnitude,
}

/// Solver flags shared by `run` and `mc`.
#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub rank: Option<usize>,
    /// Outer iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Row-update steps per outer iteration.
    #[arg(long)]
    pub inner_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Penalty step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub w_rule: Option<WRuleArg>,
    #[arg(long, value_enum)]
    pub jacobian: Option<JacobianArg>,
}

impl SolverArgs {
    pub fn apply(&self, s: &mut shinbo::SolverConfig) {
        if let Some(v) = self.rank {
            s.rank = v;
        }
        if let Some(v) = self.max_iters {
            s.max_outer_iters = v;
        }
        if let Some(v) = self.inner_iters {
            s.inner_iters = v;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        if let Some(v) = self.alpha {
            s.step_alpha = v;
        }
        if let Some(v) = self.w_rule {
            s.w_update_rule = match v {
                WRuleArg::PaperEuclidean => WUpdateRule::PaperEuclidean,
                WRuleArg::IsDivergence => WUpdateRule::IsDivergence,
            };
        }
        if let Some(v) = self.jacobian {
            s.jacobian = match v {
                JacobianArg::Exact => JacobianMode::Exact,
                JacobianArg::Diagonal => JacobianMode::Diagonal,
            };
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Data matrix as CSV.
    #[arg(long, conflicts_with = "signal")]
    pub input: Option<PathBuf>,
    /// Mono WAV or one-column CSV signal.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    /// Fixed penalty for `mu`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub warm_start_iters: Option<usize>,
    /// Initial W; needs --h0.
    #[arg(long, requires = "h0")]
    pub w0: Option<PathBuf>,
    #[arg(long, requires = "w0")]
    pub h0: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub stft: StftParamArgs,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads.
    #[arg(long, env = "SHINBO_WORKERS")]
    pub workers: Option<usize>,
    /// Seed of run 0; run `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise level (synthetic mode).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Burst amplitude (surrogate mode); 0 gives pure noise.
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub h: Option<PathBuf>,
    #[arg(long)]
    pub w_true: Option<PathBuf>,
    #[arg(long)]
    pub h_true: Option<PathBuf>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    /// Known fundamental in Hz.
    #[arg(long, conflicts_with = "band")]
    pub f0: Option<f64>,
    /// Search band for the fundamental, in Hz.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub band: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct StftParamArgs {
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub nfft: Option<usize>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
}

impl StftParamArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.stft;
        if let Some(v) = self.window_len {
            p.window_len = v;
        }
        if let Some(v) = self.overlap {
            p.overlap = v;
        }
        if let Some(v) = self.nfft {
            p.nfft = v;
        }
        if let Some(v) = self.scale {
            p.scale = match v {
                ScaleArg::Power => SpectrogramScale::Power,
                ScaleArg::Magnitude => SpectrogramScale::Magnitude,
            };
        }
    }
}

#[derive(Debug, Args)]
pub struct StftArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    #[command(flatten)]
    pub params: StftParamArgs,
}

impl GenArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let s = &mut cfg.gen.spec;
        if let Some(v) = self.m {
            s.m = v;
        }
        if let Some(v) = self.n {
            s.n = v;
        }
        if let Some(v) = self.rank {
            s.r = v;
        }
        if let Some(v) = self.density_w {
            s.density_w = v;
        }
        if let Some(v) = self.density_h {
            s.density_h = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.noise {
            cfg.gen.noise = v;
        }
    }
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let run = &mut cfg.run;
        if let Some(p) = &self.input {
            run.input = Some(p.clone());
            run.signal = None;
        }
        if let Some(p) = &self.signal {
            run.signal = Some(p.clone());
            run.input = None;
        }
        if self.sample_rate.is_some() {
            run.sample_rate = self.sample_rate;
        }
        match self.algorithm {
            Some(AlgorithmArg::Shinbo) => run.algorithm = Algorithm::Shinbo,
            Some(AlgorithmArg::Mu) => {
                run.algorithm = Algorithm::Mu {
                    lambda: self.lambda.unwrap_or(0.0),
                }
            }
            None => {
                if let (Some(l), Algorithm::Mu { .. }) = (self.lambda, run.algorithm) {
                    run.algorithm = Algorithm::Mu { lambda: l };
                }
            }
        }
        if let Some(v) = self.seed {
            run.solver.seed = v;
        }
        match (self.init, &self.w0, &self.h0) {
            (_, Some(w), Some(h)) => {
                run.init = InitConfig::Files {
                    w: w.clone(),
                    h: h.clone(),
                }
            }
            (Some(InitArg::Nndsvd), ..) => run.init = InitConfig::Nndsvd,
            (Some(InitArg::Random), ..) => run.init = InitConfig::Random,
            (Some(InitArg::WarmStart), ..) => {
                run.init = InitConfig::WarmStart {
                    iters: self.warm_start_iters.unwrap_or(50),
                }
            }
            (None, ..) => {
                if let (Some(n), InitConfig::WarmStart { iters }) = (self.warm_start_iters, &mut run.init) {
                    *iters = n;
                }
            }
        }
        self.solver.apply(&mut run.solver);
        self.stft.apply(cfg);
    }
}

impl McArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let mc = &mut cfg.mc;
        if let Some(m) = self.mode {
            mc.mode = match m {
                ModeArg::Synthetic => McMode::Synthetic,
                ModeArg::Surrogate => McMode::Surrogate,
            };
        }
        if self.workers.is_some() {
            mc.workers = self.workers;
        }
        if let Some(v) = self.noise {
            mc.synthetic.noise = v;
        }
        if let Some(v) = self.amplitude {
            mc.surrogate.signal.amplitude = v;
        }
        match mc.mode {
            McMode::Synthetic => {
                let b = &mut mc.synthetic;
                if let Some(v) = self.runs {
                    b.runs = v;
                }
                if let Some(v) = self.seed {
                    b.spec.seed = v;
                }
                self.solver.apply(&mut b.solver);
                // The generator rank and the solver rank move together.
                if let Some(r) = self.solver.rank {
                    b.spec.r = r;
                }
            }
            McMode::Surrogate => {
                let b = &mut mc.surrogate;
                if let Some(v) = self.runs {
                    b.runs = v;
                }
                if let Some(v) = self.seed {
                    b.signal.seed = v;
                }
                self.solver.apply(&mut b.solver);
            }
        }
    }
}

impl EvalArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let e = &mut cfg.eval;
        for (dst, src) in [
            (&mut e.w, &self.w),
            (&mut e.h, &self.h),
            (&mut e.w_true, &self.w_true),
            (&mut e.h_true, &self.h_true),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        if self.frame_rate.is_some() {
            e.frame_rate = self.frame_rate;
        }
        if let Some(f) = self.f0 {
            e.fundamental = Some(Fundamental::Known(f));
        }
        if let Some(b) = &self.band {
            e.fundamental = Some(Fundamental::Detect { lo: b[0], hi: b[1] });
        }
    }
}
