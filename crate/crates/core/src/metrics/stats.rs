use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest pooled sample size for which [`mann_whitney`] enumerates the exact
/// permutation distribution.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn check_sample(s: &[f64], name: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} is empty")));
    }
    if s.len() < 2 {
        return Err(Error::InvalidArgument(format!("{name} needs at least 2 observations")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Midranks (1-based) of the pooled values, plus the tie term `sum(t^3 - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test. Uses the exact permutation distribution
/// when the pooled size is at most [`EXACT_MAX_TOTAL`], the tie-corrected
/// normal approximation otherwise. The statistic is `U` of `x`.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() + y.len() <= EXACT_MAX_TOTAL {
        mann_whitney_exact(x, y)
    } else {
        mann_whitney_normal(x, y)
    }
}

/// Exact two-sided test: enumerates every split of the pooled midranks and
/// counts those whose rank sum deviates from its mean at least as much as the
/// observed one. Ties are handled by the midranks themselves.
pub fn mann_whitney_exact(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_sample(x, "first sample")?;
    check_sample(y, "second sample")?;
    let (n1, n) = (x.len(), x.len() + y.len());
    if n > 24 {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration is limited to 24 pooled observations, got {n}"
        )));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let observed: f64 = ranks[..n1].iter().sum();
    let mean = n1 as f64 * (n as f64 + 1.0) / 2.0;
    let dev = (observed - mean).abs() - 1e-9;
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        total += 1;
        let s: f64 = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| ranks[b]).sum();
        if (s - mean).abs() >= dev {
            extreme += 1;
        }
    }
    Ok(TestResult {
        statistic: observed - (n1 * (n1 + 1)) as f64 / 2.0,
        p_value: extreme as f64 / total as f64,
    })
}

/// Normal approximation with tie correction and continuity correction.
pub fn mann_whitney_normal(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_sample(x, "first sample")?;
    check_sample(y, "second sample")?;
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let n = n1 + n2;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..x.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return Ok(TestResult { statistic: u, p_value: 1.0 });
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    Ok(TestResult {
        statistic: u,
        p_value: (2.0 * normal.sf(z)).min(1.0),
    })
}

/// Kruskal-Wallis H test with tie correction; `p` from the chi-squared
/// distribution with `groups - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("need at least two groups".into()));
    }
    for (i, g) in groups.iter().enumerate() {
        check_sample(g, &format!("group {i}"))?;
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if !(correction > 0.0) {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let rs: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += rs * rs / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let chi = ChiSquared::new((groups.len() - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic: h,
        p_value: chi.sf(h).clamp(0.0, 1.0),
    })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, p)) = p_values.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "p-value {p} at index {i} is outside [0, 1]"
        )));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(p_values[idx] * m as f64 / (rank + 1) as f64);
        // p * m / m can round below p.
        adjusted[idx] = running.min(1.0).max(p_values[idx]);
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_separated_samples() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_show_no_difference() {
        let x = [1.0, 2.5, 3.0, 4.2];
        assert!(mann_whitney(&x, &x).unwrap().p_value >= 0.99);
        let big: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(mann_whitney(&big, &big).unwrap().p_value >= 0.99);
    }

    #[test]
    fn mann_whitney_rejects_tiny_samples() {
        assert!(mann_whitney(&[], &[1.0, 2.0]).is_err());
        assert!(mann_whitney(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kruskal_identical_groups() {
        let g = [1.0, 2.0, 3.0];
        let r = kruskal_wallis(&[&g, &g, &g]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let c = [5.0, 5.0];
        let r = kruskal_wallis(&[&c, &c]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(kruskal_wallis(&[&g]).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.2]).unwrap(), vec![0.2]);
        let adj = bh_adjust(&[0.01, 0.02, 0.03]).unwrap();
        assert!(adj.iter().all(|&p| (p - 0.03).abs() < 1e-15));
        assert_eq!(bh_adjust(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert!(bh_adjust(&[0.5, 1.5]).is_err());
    }
}
