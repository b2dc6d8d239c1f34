//! Seeded synthetic data: sparse ground-truth factors, additive noise with
//! projection onto the nonnegative orthant, and a periodic burst-train signal
//! used as a surrogate for bearing-fault vibration recordings.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::signal::SampledSignal;
use crate::{Error, Result};

/// Shape and sparsity of a synthetic factorization problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// Fraction of nonzero entries in `W`.
    pub density_w: f64,
    /// Fraction of nonzero entries in `H`.
    pub density_h: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m: 100,
            n: 70,
            r: 3,
            density_w: 0.10,
            density_h: 0.70,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub x: Array2<f64>,
}

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Places `round(density * rows * cols)` nonzeros uniformly at random with
/// values in `(0, 1]`, resampling placements until every line along `axis`
/// (0: rows, 1: columns) holds at least one nonzero.
fn sparse_factor(
    rows: usize,
    cols: usize,
    density: f64,
    cover_columns: bool,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<Array2<f64>> {
    let total = rows * cols;
    let nnz = (density * total as f64).round() as usize;
    let lines = if cover_columns { cols } else { rows };
    if nnz < lines {
        return Err(Error::InvalidArgument(format!(
            "{name}: density {density} gives {nnz} nonzeros, fewer than the {lines} components to cover"
        )));
    }
    for _ in 0..MAX_PLACEMENT_TRIES {
        let idx = sample(rng, total, nnz);
        let mut covered = vec![false; lines];
        for p in idx.iter() {
            let line = if cover_columns { p % cols } else { p / cols };
            covered[line] = true;
        }
        if covered.iter().all(|&c| c) {
            let mut a = Array2::zeros((rows, cols));
            let mut positions: Vec<usize> = idx.into_vec();
            positions.sort_unstable();
            for p in positions {
                // 1 - U[0, 1) lies in (0, 1].
                a[[p / cols, p % cols]] = 1.0 - rng.random::<f64>();
            }
            return Ok(a);
        }
    }
    Err(Error::InvalidArgument(format!(
        "{name}: could not place nonzeros covering every component"
    )))
}

/// Draws sparse `W` (every column nonzero) and `H` (every row nonzero) and
/// returns them with `X = W H`.
pub fn synth_factors(spec: &SynthSpec) -> Result<SynthData> {
    let SynthSpec { m, n, r, .. } = *spec;
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    if r > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} exceeds min({m}, {n})"
        )));
    }
    for (d, name) in [(spec.density_w, "density_w"), (spec.density_h, "density_h")] {
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = sparse_factor(m, r, spec.density_w, true, &mut rng, "W")?;
    let h = sparse_factor(r, n, spec.density_h, false, &mut rng, "H")?;
    let x = w.dot(&h);
    Ok(SynthData { w, h, x })
}

/// `Y = max(X + epsilon * G, 0)` with `G` i.i.d. standard normal.
pub fn add_noise(x: &Array2<f64>, epsilon: f64, seed: u64) -> Result<Array2<f64>> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument("noise level must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = x.clone();
    y.iter_mut().for_each(|v| {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = (*v + epsilon * g).max(0.0);
    });
    Ok(y)
}

/// Parameters of the periodic burst-train signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstTrain {
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Length in seconds.
    pub duration: f64,
    /// Burst repetition rate in Hz.
    pub f0: f64,
    /// Resonance excited by each burst, in Hz.
    pub carrier_hz: f64,
    /// Exponential decay rate of a burst, in 1/s.
    pub decay: f64,
    /// Peak burst amplitude; zero yields pure noise.
    pub amplitude: f64,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for BurstTrain {
    fn default() -> Self {
        Self {
            fs: 50_000.0,
            duration: 1.0,
            f0: 91.0,
            carrier_hz: 12_000.0,
            decay: 1_500.0,
            amplitude: 1.0,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Exponentially decaying carrier bursts repeating at `f0`, plus white noise.
pub fn impulsive_signal(p: &BurstTrain) -> Result<SampledSignal> {
    if !(p.fs > 0.0) || !(p.duration > 0.0) {
        return Err(Error::InvalidArgument("fs and duration must be positive".into()));
    }
    let nyquist = p.fs / 2.0;
    if !(p.f0 > 0.0 && p.f0 < nyquist) {
        return Err(Error::InvalidArgument(format!("f0 must lie in (0, {nyquist})")));
    }
    if !(p.carrier_hz > 0.0 && p.carrier_hz < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "carrier must lie in (0, {nyquist})"
        )));
    }
    if !(p.decay >= 0.0) || !(p.amplitude >= 0.0) || !(p.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "decay, amplitude and noise level must be nonnegative".into(),
        ));
    }
    let len = (p.fs * p.duration).round() as usize;
    let period = 1.0 / p.f0;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / p.fs;
            let tau = t % period;
            let burst = p.amplitude
                * (-p.decay * tau).exp()
                * (2.0 * std::f64::consts::PI * p.carrier_hz * tau).sin();
            let g: f64 = StandardNormal.sample(&mut rng);
            burst + p.noise_sigma * g
        })
        .collect();
    SampledSignal::new(samples, p.fs)
}
