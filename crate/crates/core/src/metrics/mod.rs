//! Factor-quality metrics and nonparametric comparisons.

mod stats;

pub use stats::{bh_adjust, kruskal_wallis, mann_whitney, mann_whitney_exact, mann_whitney_normal, TestResult};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reported SIR when an estimate matches its reference to machine precision.
pub const SIR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirReport {
    /// SIR of each reference component against its matched estimate, in dB.
    pub per_component: Vec<f64>,
    pub mean: f64,
    /// `permutation[i]` is the estimate matched to reference `i`.
    pub permutation: Vec<usize>,
}

fn unit(v: ArrayView1<f64>, which: &str, idx: usize) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{which} component {idx} has zero or non-finite norm"
        )));
    }
    Ok(v.mapv(|x| x / norm))
}

/// Signal-to-interference ratio between reference and estimated components.
///
/// Components are scaled to unit norm and greedily paired by largest
/// absolute cosine similarity. Each estimate is scaled onto its reference by
/// least squares, and `SIR = 10 log10(||a||^2 / ||a - c a_hat||^2)`, capped at
/// [`SIR_CAP_DB`].
pub fn sir(reference: &[ArrayView1<f64>], estimate: &[ArrayView1<f64>]) -> Result<SirReport> {
    let r = reference.len();
    if r == 0 || estimate.len() != r {
        return Err(Error::Dimension(format!(
            "{} reference vs {} estimated components",
            r,
            estimate.len()
        )));
    }
    let len = reference[0].len();
    if reference.iter().chain(estimate).any(|v| v.len() != len) {
        return Err(Error::Dimension("component lengths differ".into()));
    }
    let refs = reference
        .iter()
        .enumerate()
        .map(|(i, v)| unit(*v, "reference", i))
        .collect::<Result<Vec<_>>>()?;
    let ests = estimate
        .iter()
        .enumerate()
        .map(|(i, v)| unit(*v, "estimated", i))
        .collect::<Result<Vec<_>>>()?;

    let mut permutation = vec![usize::MAX; r];
    let mut est_used = vec![false; r];
    for _ in 0..r {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, a) in refs.iter().enumerate().filter(|(i, _)| permutation[*i] == usize::MAX) {
            for (j, b) in ests.iter().enumerate().filter(|(j, _)| !est_used[*j]) {
                let sim = a.dot(b).abs();
                if sim > best.0 {
                    best = (sim, i, j);
                }
            }
        }
        permutation[best.1] = best.2;
        est_used[best.2] = true;
    }

    let per_component: Vec<f64> = refs
        .iter()
        .zip(&permutation)
        .map(|(a, &j)| {
            let b = &ests[j];
            let c = a.dot(b) / b.dot(b);
            let err: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - c * y).powi(2)).sum();
            let signal = a.dot(a);
            if err <= 0.0 {
                SIR_CAP_DB
            } else {
                (10.0 * (signal / err).log10()).min(SIR_CAP_DB)
            }
        })
        .collect();
    let mean = per_component.iter().sum::<f64>() / r as f64;
    Ok(SirReport {
        per_component,
        mean,
        permutation,
    })
}

/// SIR over the columns of two matrices (dictionary atoms).
pub fn sir_columns(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<SirReport> {
    axis_sir(reference, estimate, Axis(1))
}

/// SIR over the rows of two matrices (activations).
pub fn sir_rows(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<SirReport> {
    axis_sir(reference, estimate, Axis(0))
}

fn axis_sir(reference: &Array2<f64>, estimate: &Array2<f64>, axis: Axis) -> Result<SirReport> {
    if reference.dim() != estimate.dim() {
        return Err(Error::Dimension(format!(
            "reference {:?} vs estimate {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let a: Vec<_> = reference.axis_iter(axis).collect();
    let b: Vec<_> = estimate.axis_iter(axis).collect();
    sir(&a, &b)
}

/// Percentage of entries not exceeding `tau`.
pub fn sparsity(a: &Array2<f64>, tau: f64) -> f64 {
    if a.is_empty() {
        return 100.0;
    }
    let above = a.iter().filter(|&&v| v > tau).count();
    (1.0 - above as f64 / a.len() as f64) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_estimate_hits_cap() {
        let a = array![[1.0, 0.0, 2.0], [0.5, 1.0, 0.0]];
        let rep = sir_rows(&a, &a).unwrap();
        assert_eq!(rep.per_component, vec![SIR_CAP_DB, SIR_CAP_DB]);
        assert_eq!(rep.permutation, vec![0, 1]);
    }

    #[test]
    fn orthogonal_estimate_scores_zero_db() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 3.0];
        let rep = sir(&[a.view()], &[b.view()]).unwrap();
        assert!(rep.mean.abs() < 1e-12);
    }

    #[test]
    fn swap_is_recovered() {
        let t = array![[1.0, 0.2, 0.0, 0.5], [0.0, 1.0, 0.7, 0.1]];
        let e = array![[0.1, 1.1, 0.6, 0.1], [1.0, 0.25, 0.05, 0.5]];
        let swapped = array![[1.0, 0.25, 0.05, 0.5], [0.1, 1.1, 0.6, 0.1]];
        let a = sir_rows(&t, &e).unwrap();
        let b = sir_rows(&t, &swapped).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(b.permutation, vec![0, 1]);
        assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn zero_component_is_rejected() {
        let t = array![[1.0, 0.0], [0.0, 0.0]];
        let err = sir_rows(&t, &t).unwrap_err();
        assert!(err.to_string().contains("component 1"));
    }

    #[test]
    fn sparsity_cases() {
        assert_eq!(sparsity(&Array2::zeros((4, 5)), 1e-6), 100.0);
        assert_eq!(sparsity(&Array2::ones((4, 5)), 1e-6), 0.0);
        let mut a = Array2::zeros((10, 10));
        a.iter_mut().take(25).for_each(|v| *v = 0.5);
        assert_eq!(sparsity(&a, 1e-6), 75.0);
    }
}
