use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use shinbo::datagen::{add_noise, synth_factors, SynthSpec};
use shinbo::experiment::{
    component_envsi, noise_seed, warm_start, Algorithm, BatchResult, RunMetrics, Summary,
};
use shinbo::factor::{nndsvd_init, run_mu, truncated_gaussian_init};
use shinbo::metrics::{sir_columns, sir_rows, sparsity, SirReport};
use shinbo::signal::stft_spectrogram;
use shinbo::{run_shinbo, FactorPair, LambdaMode, ObjectiveValue, RunTrace, SolverConfig};

use crate::config::{ExperimentConfig, InitConfig, McMode, RunConfig};
use crate::io::{read_matrix, read_signal, write_json, write_matrix, write_table, write_vector};
use crate::CliError;

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn save_config(out: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| CliError::io(&path, e))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub spec: SynthSpec,
    pub noise: f64,
    /// Seed of the added noise, when there is any.
    pub noise_seed: Option<u64>,
    pub w_true: [usize; 2],
    pub h_true: [usize; 2],
    pub x: [usize; 2],
}

/// Writes `W_true.csv`, `H_true.csv`, `X.csv` and `manifest.json`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenManifest, CliError> {
    let g = &cfg.gen;
    let data = synth_factors(&g.spec)?;
    let (x, seed) = if g.noise > 0.0 {
        let s = noise_seed(g.spec.seed);
        (add_noise(&data.x, g.noise, s)?, Some(s))
    } else {
        (data.x, None)
    };
    create_dir(out)?;
    write_matrix(&out.join("W_true.csv"), &data.w)?;
    write_matrix(&out.join("H_true.csv"), &data.h)?;
    write_matrix(&out.join("X.csv"), &x)?;
    let dims = |a: &Array2<f64>| [a.nrows(), a.ncols()];
    let manifest = GenManifest {
        spec: g.spec,
        noise: g.noise,
        noise_seed: seed,
        w_true: dims(&data.w),
        h_true: dims(&data.h),
        x: dims(&x),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Data matrix of a run with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInput {
    pub x: Array2<f64>,
    /// Frames per second when `x` is a spectrogram.
    pub frame_rate: Option<f64>,
    /// Divisor applied to a spectrogram to give it unit mean.
    pub scale: Option<f64>,
}

pub fn load_run_input(cfg: &ExperimentConfig) -> Result<RunInput, CliError> {
    let run = &cfg.run;
    match (&run.input, &run.signal) {
        (Some(p), None) => Ok(RunInput {
            x: read_matrix(p)?,
            frame_rate: None,
            scale: None,
        }),
        (None, Some(p)) => {
            let sig = read_signal(p, run.sample_rate)?;
            let spec = stft_spectrogram(&sig, &cfg.stft)?;
            let mean = spec.power.mean().unwrap_or(0.0);
            if !(mean > 0.0) {
                return Err(CliError::Input(format!("{}: spectrogram has no energy", p.display())));
            }
            Ok(RunInput {
                x: spec.power / mean,
                frame_rate: Some(spec.frame_rate),
                scale: Some(mean),
            })
        }
        (Some(_), Some(_)) => Err(CliError::Config("give either an input matrix or a signal, not both".into())),
        (None, None) => Err(CliError::Config("no input: set run.input or run.signal".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub factors: FactorPair,
    pub trace: RunTrace,
    pub lambda: Vec<f64>,
}

pub fn initial_factors(run: &RunConfig, x: &Array2<f64>) -> Result<FactorPair, CliError> {
    let r = run.solver.rank;
    let init = match &run.init {
        InitConfig::Nndsvd => nndsvd_init(x, r, run.solver.floor)?,
        InitConfig::WarmStart { iters } => warm_start(x, r, *iters, &run.solver)?,
        InitConfig::Random => truncated_gaussian_init(x.nrows(), x.ncols(), r, run.solver.seed)?,
        InitConfig::Files { w, h } => FactorPair::new(read_matrix(w)?, read_matrix(h)?)?,
    };
    if init.rank() != r {
        return Err(CliError::Config(format!(
            "initial factors have rank {}, solver rank is {r}",
            init.rank()
        )));
    }
    Ok(init)
}

/// Runs the configured algorithm on `x` in memory.
pub fn solve(run: &RunConfig, x: &Array2<f64>) -> Result<Solved, CliError> {
    let init = initial_factors(run, x)?;
    match run.algorithm {
        Algorithm::Mu { lambda } => {
            let cfg = SolverConfig {
                lambda_mode: LambdaMode::Fixed(lambda),
                ..run.solver.clone()
            };
            let (factors, trace) = run_mu(x, &cfg, &init)?;
            Ok(Solved {
                lambda: vec![lambda; factors.rank()],
                factors,
                trace,
            })
        }
        Algorithm::Shinbo => {
            let cfg = SolverConfig {
                lambda_mode: LambdaMode::PerRowAdaptive,
                ..run.solver.clone()
            };
            let out = run_shinbo(x, &cfg, &init)?;
            Ok(Solved {
                factors: out.factors,
                trace: out.trace,
                lambda: out.lambda.into_vec(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub algorithm: String,
    pub shape: [usize; 2],
    pub frame_rate: Option<f64>,
    pub input_scale: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: Option<ObjectiveValue>,
    pub final_response: Option<f64>,
    pub lambda: Vec<f64>,
}

/// Writes `W.csv`, `H.csv`, `lambda.csv`, `trace.csv`, `report.json` and the
/// resolved `config.toml`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let input = load_run_input(cfg)?;
    let solved = solve(&cfg.run, &input.x)?;
    create_dir(out)?;
    write_matrix(&out.join("W.csv"), &solved.factors.w)?;
    write_matrix(&out.join("H.csv"), &solved.factors.h)?;
    write_vector(&out.join("lambda.csv"), &solved.lambda)?;
    write_trace(&out.join("trace.csv"), &solved.trace, solved.lambda.len())?;
    save_config(out, cfg)?;
    let last = solved.trace.records.last();
    let report = RunReport {
        config: cfg.clone(),
        algorithm: cfg.run.algorithm.label(),
        shape: [input.x.nrows(), input.x.ncols()],
        frame_rate: input.frame_rate,
        input_scale: input.scale,
        iterations: solved.trace.len(),
        converged: solved.trace.converged,
        final_objective: last.map(|r| r.objective),
        final_response: last.map(|r| r.response),
        lambda: solved.lambda,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// One row per outer iteration: `k, D0, response, lambda_1..lambda_r, seconds`.
pub fn write_trace(path: &Path, trace: &RunTrace, r: usize) -> Result<(), CliError> {
    let lambda_cols: Vec<String> = (1..=r).map(|l| format!("lambda_{l}")).collect();
    let mut header = vec!["k", "D0", "response"];
    header.extend(lambda_cols.iter().map(String::as_str));
    header.push("seconds");
    let rows = trace.records.iter().map(|rec| {
        let mut row = vec![rec.iter.to_string(), fmt(rec.objective.fit), fmt(rec.response)];
        row.extend(rec.lambda.iter().map(|&v| fmt(v)));
        row.push(fmt(rec.elapsed_secs));
        row
    });
    write_table(path, &header, rows)
}

/// Everything `mc` produces; the summary is recomputable from `rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: ExperimentConfig,
    pub metrics: Vec<String>,
    pub rows: Vec<RunMetrics>,
    pub summary: Summary,
    pub partial: bool,
}

impl ReportBundle {
    pub fn from_batch(config: ExperimentConfig, metrics: &[&str], batch: BatchResult) -> Result<Self, CliError> {
        let summary = batch.summarize(metrics)?;
        Ok(Self {
            config,
            metrics: metrics.iter().map(|s| s.to_string()).collect(),
            partial: batch.partial,
            rows: batch.rows,
            summary,
        })
    }
}

pub fn mc_metrics(mode: McMode) -> &'static [&'static str] {
    match mode {
        McMode::Synthetic => &["sir_w", "sir_h", "sp_w", "sp_h"],
        McMode::Surrogate => &["envsi", "sp_w", "sp_h"],
    }
}

/// Runs the configured batch on `workers` threads (all cores when unset).
pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchResult, CliError> {
    let mc = &cfg.mc;
    if mc.runs() < 2 {
        return Err(CliError::Config(format!("mc needs at least 2 runs, got {}", mc.runs())));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = mc.workers {
        if n == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let batch = pool.install(|| match mc.mode {
        McMode::Synthetic => mc.synthetic.run(),
        McMode::Surrogate => mc.surrogate.run(),
    })?;
    Ok(batch)
}

/// Writes `runs.csv`, `observations.csv`, `table.csv`, `pairwise.csv`,
/// `kruskal.csv`, `summary.json` and the resolved `config.toml`.
pub fn cmd_mc(cfg: &ExperimentConfig, out: &Path) -> Result<ReportBundle, CliError> {
    let batch = run_batch(cfg)?;
    let metrics = mc_metrics(cfg.mc.mode);
    let bundle = ReportBundle::from_batch(cfg.clone(), metrics, batch)?;
    create_dir(out)?;
    write_bundle(out, &bundle)?;
    save_config(out, cfg)?;
    Ok(bundle)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_bundle(out: &Path, b: &ReportBundle) -> Result<(), CliError> {
    write_table(
        &out.join("runs.csv"),
        &[
            "run", "seed", "algorithm", "sir_w", "sir_h", "sp_w", "sp_h", "envsi", "iterations", "converged", "error",
        ],
        b.rows.iter().map(|r| {
            vec![
                r.run.to_string(),
                r.seed.to_string(),
                r.algorithm.clone(),
                fmt(r.sir_w),
                fmt(r.sir_h),
                fmt(r.sp_w),
                fmt(r.sp_h),
                opt(r.envsi),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_table(
        &out.join("observations.csv"),
        &["run", "seed", "algorithm", "metric", "value"],
        b.rows.iter().flat_map(|r| {
            b.metrics.iter().filter_map(move |m| {
                r.metric(m)
                    .map(|v| vec![r.run.to_string(), r.seed.to_string(), r.algorithm.clone(), m.clone(), fmt(v)])
            })
        }),
    )?;
    write_table(
        &out.join("table.csv"),
        &["algorithm", "metric", "mean", "std", "n"],
        b.summary
            .table
            .iter()
            .map(|s| vec![s.algorithm.clone(), s.metric.clone(), fmt(s.mean), fmt(s.std), s.n.to_string()]),
    )?;
    write_table(
        &out.join("pairwise.csv"),
        &["metric", "first", "second", "statistic", "p_value", "p_adjusted"],
        b.summary.pairwise.iter().map(|p| {
            vec![
                p.metric.clone(),
                p.first.clone(),
                p.second.clone(),
                fmt(p.statistic),
                fmt(p.p_value),
                fmt(p.p_adjusted),
            ]
        }),
    )?;
    write_table(
        &out.join("kruskal.csv"),
        &["metric", "statistic", "p_value"],
        b.summary
            .kruskal
            .iter()
            .map(|k| vec![k.metric.clone(), fmt(k.test.statistic), fmt(k.test.p_value)]),
    )?;
    write_json(&out.join("summary.json"), b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sir_w: Option<SirReport>,
    pub sir_h: Option<SirReport>,
    pub sp_w: f64,
    pub sp_h: f64,
    /// Envelope indicator of each activation row.
    pub envsi: Option<Vec<f64>>,
    pub best_envsi: Option<f64>,
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("eval needs {name}")))
}

/// Metrics of persisted factors against persisted truth and/or the envelope
/// indicator of the activations.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport, CliError> {
    let e = &cfg.eval;
    let w = read_matrix(required(&e.w, "w")?)?;
    let h = read_matrix(required(&e.h, "h")?)?;
    let sir_w = e.w_true.as_deref().map(|p| Ok::<_, CliError>(sir_columns(&read_matrix(p)?, &w)?)).transpose()?;
    let sir_h = e.h_true.as_deref().map(|p| Ok::<_, CliError>(sir_rows(&read_matrix(p)?, &h)?)).transpose()?;
    let envsi = match (e.frame_rate, e.fundamental) {
        (Some(rate), Some(f)) => Some(component_envsi(&h, rate, f, &e.envsi)?),
        (Some(_), None) => return Err(CliError::Config("frame_rate given without a fundamental".into())),
        (None, _) => None,
    };
    if sir_w.is_none() && sir_h.is_none() && envsi.is_none() {
        return Err(CliError::Config(
            "nothing to evaluate: give ground-truth factors or a frame rate".into(),
        ));
    }
    Ok(EvalReport {
        sir_w,
        sir_h,
        sp_w: sparsity(&w, e.tau),
        sp_h: sparsity(&h, e.tau),
        best_envsi: envsi.as_ref().map(|v| v.iter().cloned().fold(0.0, f64::max)),
        envsi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftReport {
    pub bins: usize,
    pub frames: usize,
    pub freq_resolution: f64,
    pub frame_rate: f64,
    pub sample_rate: f64,
    pub samples: usize,
}

/// Writes the spectrogram (bins by frames) to `X.csv` and its layout to
/// `stft.json`.
pub fn cmd_stft(cfg: &ExperimentConfig, signal: &Path, sample_rate: Option<f64>, out: &Path) -> Result<StftReport, CliError> {
    let sig = read_signal(signal, sample_rate)?;
    let spec = stft_spectrogram(&sig, &cfg.stft)?;
    create_dir(out)?;
    write_matrix(&out.join("X.csv"), &spec.power)?;
    let report = StftReport {
        bins: spec.power.nrows(),
        frames: spec.power.ncols(),
        freq_resolution: spec.freq_resolution,
        frame_rate: spec.frame_rate,
        sample_rate: sig.sample_rate(),
        samples: sig.samples().len(),
    };
    write_json(&out.join("stft.json"), &report)?;
    Ok(report)
}
