//! Seeded Monte-Carlo batches comparing the fixed-penalty baselines with the
//! bi-level solver, plus aggregation into summary tables and pairwise tests.
//!
//! Every run is keyed by its index; runs execute in parallel but results are
//! collected in index order, so batches are reproducible regardless of
//! scheduling.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilevel::run_shinbo;
use crate::datagen::{add_noise, impulsive_signal, synth_factors, BurstTrain, SynthSpec};
use crate::factor::{nndsvd_init, run_mu, truncated_gaussian_init};
use crate::metrics::{bh_adjust, kruskal_wallis, mann_whitney, sir_columns, sir_rows, sparsity, TestResult};
use crate::signal::{detect_fundamental, envelope_spectrum, envsi, stft_spectrogram, EnvsiOptions, StftParams};
use crate::{Error, FactorPair, LambdaMode, Result, RunTrace, SolverConfig, WUpdateRule};

/// Threshold below which an entry counts as zero in the sparsity measure.
pub const SPARSITY_TAU: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Multiplicative updates with the same fixed penalty on every row.
    Mu { lambda: f64 },
    /// Bi-level solver with per-row penalties.
    Shinbo,
}

impl Algorithm {
    /// `MU` (no penalty), `MU 0.1`, `MU 0.5` and `SHINBO`.
    pub fn standard_set() -> Vec<Algorithm> {
        vec![
            Algorithm::Mu { lambda: 0.0 },
            Algorithm::Mu { lambda: 0.1 },
            Algorithm::Mu { lambda: 0.5 },
            Algorithm::Shinbo,
        ]
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Runs the solver from `init`. Baselines ignore `config.lambda_mode`.
    pub fn solve(&self, x: &Array2<f64>, config: &SolverConfig, init: &FactorPair) -> Result<(FactorPair, RunTrace)> {
        match *self {
            Algorithm::Mu { lambda } => {
                let cfg = SolverConfig {
                    lambda_mode: LambdaMode::Fixed(lambda),
                    ..config.clone()
                };
                run_mu(x, &cfg, init)
            }
            Algorithm::Shinbo => {
                let cfg = SolverConfig {
                    lambda_mode: LambdaMode::PerRowAdaptive,
                    ..config.clone()
                };
                let out = run_shinbo(x, &cfg, init)?;
                Ok((out.factors, out.trace))
            }
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Mu { lambda } if *lambda == 0.0 => write!(f, "MU"),
            Algorithm::Mu { lambda } => write!(f, "MU {lambda}"),
            Algorithm::Shinbo => write!(f, "SHINBO"),
        }
    }
}

/// Solver settings used by the batch presets: library defaults, except that
/// `W` follows the IS-divergence rule. The Euclidean `W` step does not
/// decrease the IS objective, and baselines built on it stall far from the
/// generating factors.
pub fn experiment_solver() -> SolverConfig {
    SolverConfig {
        w_update_rule: WUpdateRule::IsDivergence,
        ..SolverConfig::default()
    }
}

/// Metrics of one algorithm on one run. `error` is set, and every metric is
/// NaN, when the solver failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub algorithm: String,
    pub sir_w: f64,
    pub sir_h: f64,
    pub sp_w: f64,
    pub sp_h: f64,
    /// Best-component envelope indicator (surrogate batches only).
    pub envsi: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

impl RunMetrics {
    fn failed(run: usize, seed: u64, algorithm: &Algorithm, err: &Error) -> Self {
        Self {
            run,
            seed,
            algorithm: algorithm.label(),
            sir_w: f64::NAN,
            sir_h: f64::NAN,
            sp_w: f64::NAN,
            sp_h: f64::NAN,
            envsi: None,
            iterations: 0,
            converged: false,
            error: Some(err.to_string()),
        }
    }

    /// Value of a metric by name (`sir_w`, `sir_h`, `sp_w`, `sp_h`, `envsi`).
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "sir_w" => Some(self.sir_w),
            "sir_h" => Some(self.sir_h),
            "sp_w" => Some(self.sp_w),
            "sp_h" => Some(self.sp_h),
            "envsi" => self.envsi,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticBatch {
    pub spec: SynthSpec,
    /// Standard deviation of the Gaussian noise added to `X`; 0 for none.
    pub noise: f64,
    pub runs: usize,
    /// Unpenalized MU iterations from NNDSVD that produce the shared start.
    pub warm_start_iters: usize,
    pub solver: SolverConfig,
    pub algorithms: Vec<Algorithm>,
}

impl Default for SyntheticBatch {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            noise: 0.0,
            runs: 30,
            warm_start_iters: 50,
            solver: experiment_solver(),
            algorithms: Algorithm::standard_set(),
        }
    }
}

impl SyntheticBatch {
    /// Data seed of run `i`.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.spec.seed.wrapping_add(i as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no algorithms selected".into()));
        }
        self.solver.validate()
    }

    /// Data, truth and shared starting point of run `i`.
    pub fn prepare(&self, i: usize) -> Result<(Array2<f64>, FactorPair, FactorPair)> {
        let seed = self.run_seed(i);
        let data = synth_factors(&SynthSpec { seed, ..self.spec })?;
        let x = if self.noise > 0.0 {
            add_noise(&data.x, self.noise, noise_seed(seed))?
        } else {
            data.x
        };
        let r = self.spec.r;
        let init = warm_start(&x, r, self.warm_start_iters, &self.solver)?;
        Ok((x, FactorPair { w: data.w, h: data.h }, init))
    }

    /// Runs every algorithm on run `i`.
    pub fn run_one(&self, i: usize) -> Vec<RunMetrics> {
        let seed = self.run_seed(i);
        let prepared = self.prepare(i);
        self.algorithms
            .iter()
            .map(|alg| {
                let (x, truth, init) = match &prepared {
                    Ok(p) => p,
                    Err(e) => return RunMetrics::failed(i, seed, alg, e),
                };
                let cfg = SolverConfig {
                    rank: self.spec.r,
                    seed,
                    ..self.solver.clone()
                };
                let scored = alg
                    .solve(x, &cfg, init)
                    .and_then(|(est, trace)| synthetic_metrics(i, seed, alg, truth, &est, &trace));
                scored.unwrap_or_else(|e| RunMetrics::failed(i, seed, alg, &e))
            })
            .collect()
    }

    /// All runs, in run order then algorithm order.
    pub fn run(&self) -> Result<BatchResult> {
        self.validate()?;
        let rows: Vec<RunMetrics> = (0..self.runs)
            .into_par_iter()
            .map(|i| self.run_one(i))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        Ok(BatchResult::new(rows))
    }
}

/// Seed of the noise added to the data generated from `data_seed`.
pub fn noise_seed(data_seed: u64) -> u64 {
    data_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// NNDSVD followed by `iters` unpenalized MU iterations.
pub fn warm_start(x: &Array2<f64>, r: usize, iters: usize, solver: &SolverConfig) -> Result<FactorPair> {
    let init = nndsvd_init(x, r, solver.floor)?;
    if iters == 0 {
        return Ok(init);
    }
    let cfg = SolverConfig {
        rank: r,
        max_outer_iters: iters,
        lambda_mode: LambdaMode::Fixed(0.0),
        ..solver.clone()
    };
    Ok(run_mu(x, &cfg, &init)?.0)
}

fn synthetic_metrics(
    run: usize,
    seed: u64,
    alg: &Algorithm,
    truth: &FactorPair,
    est: &FactorPair,
    trace: &RunTrace,
) -> Result<RunMetrics> {
    Ok(RunMetrics {
        run,
        seed,
        algorithm: alg.label(),
        sir_w: sir_columns(&truth.w, &est.w)?.mean,
        sir_h: sir_rows(&truth.h, &est.h)?.mean,
        sp_w: sparsity(&est.w, SPARSITY_TAU),
        sp_h: sparsity(&est.h, SPARSITY_TAU),
        envsi: None,
        iterations: trace.len(),
        converged: trace.converged,
        error: None,
    })
}

/// Where the fundamental used by the envelope indicator comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fundamental {
    /// A known fault frequency in Hz.
    Known(f64),
    /// The largest envelope peak inside `(lo, hi)` Hz of each activation.
    Detect { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateBatch {
    pub signal: BurstTrain,
    pub stft: StftParams,
    pub fundamental: Fundamental,
    pub envsi: EnvsiOptions,
    pub runs: usize,
    pub solver: SolverConfig,
    pub algorithms: Vec<Algorithm>,
}

impl Default for SurrogateBatch {
    fn default() -> Self {
        let signal = BurstTrain::default();
        Self {
            fundamental: Fundamental::Known(signal.f0),
            signal,
            stft: StftParams::default(),
            envsi: EnvsiOptions::default(),
            runs: 20,
            solver: SolverConfig {
                rank: 4,
                max_outer_iters: 100,
                ..experiment_solver()
            },
            algorithms: Algorithm::standard_set(),
        }
    }
}

impl SurrogateBatch {
    pub fn run_seed(&self, i: usize) -> u64 {
        self.signal.seed.wrapping_add(i as u64)
    }

    /// Spectrogram of run `i`, scaled to unit mean, with its frame rate.
    pub fn prepare(&self, i: usize) -> Result<(Array2<f64>, f64)> {
        let sig = impulsive_signal(&BurstTrain {
            seed: self.run_seed(i),
            ..self.signal
        })?;
        let spec = stft_spectrogram(&sig, &self.stft)?;
        let mean = spec.power.mean().unwrap_or(0.0);
        if !(mean > 0.0) {
            return Err(Error::InvalidArgument("spectrogram has no energy".into()));
        }
        Ok((spec.power / mean, spec.frame_rate))
    }

    pub fn run_one(&self, i: usize) -> Vec<RunMetrics> {
        let seed = self.run_seed(i);
        let r = self.solver.rank;
        let prepared = self.prepare(i).and_then(|(x, rate)| {
            let init = truncated_gaussian_init(x.nrows(), x.ncols(), r, seed)?;
            Ok((x, rate, init))
        });
        self.algorithms
            .iter()
            .map(|alg| {
                let (x, rate, init) = match &prepared {
                    Ok(p) => p,
                    Err(e) => return RunMetrics::failed(i, seed, alg, e),
                };
                let cfg = SolverConfig { seed, ..self.solver.clone() };
                let scored = alg.solve(x, &cfg, init).and_then(|(est, trace)| {
                    let best = best_component_envsi(&est.h, *rate, self.fundamental, &self.envsi)?;
                    Ok(RunMetrics {
                        run: i,
                        seed,
                        algorithm: alg.label(),
                        sir_w: f64::NAN,
                        sir_h: f64::NAN,
                        sp_w: sparsity(&est.w, SPARSITY_TAU),
                        sp_h: sparsity(&est.h, SPARSITY_TAU),
                        envsi: Some(best),
                        iterations: trace.len(),
                        converged: trace.converged,
                        error: None,
                    })
                });
                scored.unwrap_or_else(|e| RunMetrics::failed(i, seed, alg, &e))
            })
            .collect()
    }

    pub fn run(&self) -> Result<BatchResult> {
        if self.runs == 0 || self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("runs and algorithms must be non-empty".into()));
        }
        self.solver.validate()?;
        let rows: Vec<RunMetrics> = (0..self.runs)
            .into_par_iter()
            .map(|i| self.run_one(i))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        Ok(BatchResult::new(rows))
    }
}

/// Envelope indicator of every row of `h`.
pub fn component_envsi(
    h: &Array2<f64>,
    frame_rate: f64,
    fundamental: Fundamental,
    opts: &EnvsiOptions,
) -> Result<Vec<f64>> {
    h.rows()
        .into_iter()
        .map(|row| {
            if row.iter().all(|&v| v == row[0]) {
                return Ok(0.0);
            }
            let spec = envelope_spectrum(row, frame_rate)?;
            let f0 = match fundamental {
                Fundamental::Known(f) => f,
                Fundamental::Detect { lo, hi } => detect_fundamental(&spec, lo, hi)?,
            };
            envsi(&spec, f0, opts)
        })
        .collect()
}

/// Largest envelope indicator over the rows of `h`.
pub fn best_component_envsi(
    h: &Array2<f64>,
    frame_rate: f64,
    fundamental: Fundamental,
    opts: &EnvsiOptions,
) -> Result<f64> {
    Ok(component_envsi(h, frame_rate, fundamental, opts)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Per-run table of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub rows: Vec<RunMetrics>,
    /// True when at least one run failed.
    pub partial: bool,
}

impl BatchResult {
    pub fn new(rows: Vec<RunMetrics>) -> Self {
        let partial = rows.iter().any(|r| r.error.is_some());
        Self { rows, partial }
    }

    /// Algorithm labels in first-appearance order.
    pub fn algorithms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.algorithm) {
                out.push(r.algorithm.clone());
            }
        }
        out
    }

    /// Successful values of `metric` for `algorithm`, in run order.
    pub fn values(&self, algorithm: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.error.is_none())
            .filter_map(|r| r.metric(metric))
            .filter(|v| v.is_finite())
            .collect()
    }

    /// Mean and sample standard deviation per algorithm and metric, the
    /// Kruskal-Wallis test per metric, and BH-adjusted pairwise Mann-Whitney
    /// tests per metric.
    pub fn summarize(&self, metrics: &[&str]) -> Result<Summary> {
        let algs = self.algorithms();
        let mut table = Vec::new();
        let mut kruskal = Vec::new();
        let mut pairwise = Vec::new();
        for &metric in metrics {
            let groups: Vec<Vec<f64>> = algs.iter().map(|a| self.values(a, metric)).collect();
            for (alg, g) in algs.iter().zip(&groups) {
                let (mean, std) = mean_std(g);
                table.push(MetricSummary {
                    algorithm: alg.clone(),
                    metric: metric.to_string(),
                    mean,
                    std,
                    n: g.len(),
                });
            }
            if groups.len() >= 2 && groups.iter().all(|g| g.len() >= 2) {
                let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
                kruskal.push(KruskalEntry {
                    metric: metric.to_string(),
                    test: kruskal_wallis(&refs)?,
                });
                let mut pairs = Vec::new();
                for a in 0..groups.len() {
                    for b in a + 1..groups.len() {
                        let t = mann_whitney(&groups[a], &groups[b])?;
                        pairs.push((a, b, t));
                    }
                }
                let raw: Vec<f64> = pairs.iter().map(|p| p.2.p_value).collect();
                let adjusted = bh_adjust(&raw)?;
                for ((a, b, t), adj) in pairs.into_iter().zip(adjusted) {
                    pairwise.push(PairwiseEntry {
                        metric: metric.to_string(),
                        first: algs[a].clone(),
                        second: algs[b].clone(),
                        statistic: t.statistic,
                        p_value: t.p_value,
                        p_adjusted: adj,
                    });
                }
            }
        }
        Ok(Summary {
            table,
            kruskal,
            pairwise,
        })
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub algorithm: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalEntry {
    pub metric: String,
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub metric: String,
    pub first: String,
    pub second: String,
    pub statistic: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub table: Vec<MetricSummary>,
    pub kruskal: Vec<KruskalEntry>,
    pub pairwise: Vec<PairwiseEntry>,
}

impl Summary {
    pub fn mean(&self, algorithm: &str, metric: &str) -> Option<f64> {
        self.table
            .iter()
            .find(|s| s.algorithm == algorithm && s.metric == metric)
            .map(|s| s.mean)
    }
}
