//! Fixed problem instances shared by the benchmarks.

use shinbo::datagen::{synth_factors, SynthSpec};
use shinbo::{Array2, FactorPair, Result};

/// Synthetic `X` of the given size with its truncated-Gaussian starting point.
pub fn synthetic_problem(m: usize, n: usize, r: usize, seed: u64) -> Result<(Array2<f64>, FactorPair)> {
    let data = synth_factors(&SynthSpec { m, n, r, seed, ..Default::default() })?;
    let init = shinbo::factor::truncated_gaussian_init(m, n, r, seed)?;
    Ok((data.x, init))
}
