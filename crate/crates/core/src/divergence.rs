//! Beta-divergence family, the row-wise diversity penalty, and the full
//! penalized objective.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default positivity floor applied to reconstructions before any inverse,
/// power or logarithm.
pub const DEFAULT_FLOOR: f64 = 1e-12;

/// Parameter of the beta-divergence family. `0` is Itakura-Saito, `1` is
/// Kullback-Leibler, `2` is (half) squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta(pub f64);

impl Beta {
    pub const ITAKURA_SAITO: Beta = Beta(0.0);
    pub const KULLBACK_LEIBLER: Beta = Beta(1.0);
    pub const EUCLIDEAN: Beta = Beta(2.0);
}

/// Value of the penalized objective split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub fit: f64,
    pub penalty: f64,
    pub total: f64,
}

impl ObjectiveValue {
    pub fn new(fit: f64, penalty: f64) -> Self {
        Self {
            fit,
            penalty,
            total: fit + penalty,
        }
    }
}

/// Scalar `d_beta(x, y)` without domain checks.
#[inline]
pub fn scalar_beta_divergence(x: f64, y: f64, beta: Beta) -> f64 {
    let b = beta.0;
    if b == 0.0 {
        let q = x / y;
        q - q.ln() - 1.0
    } else if b == 1.0 {
        if x == 0.0 {
            y
        } else {
            x * (x / y).ln() - x + y
        }
    } else {
        (x.powf(b) + (b - 1.0) * y.powf(b) - b * x * y.powf(b - 1.0)) / (b * (b - 1.0))
    }
}

/// Itakura-Saito divergence of a single pair.
#[inline]
pub(crate) fn is_scalar(x: f64, y: f64) -> f64 {
    let q = x / y;
    q - q.ln() - 1.0
}

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `D_beta(A, B) = sum_ij d_beta(a_ij, b_ij)`.
///
/// `A` must be nonnegative. Entries that feed a logarithm, a division or a
/// negative power must be strictly positive; the first offending entry is
/// reported by index.
pub fn beta_divergence(a: &Array2<f64>, b: &Array2<f64>, beta: Beta) -> Result<f64> {
    check_same_shape(&a.view(), &b.view())?;
    let bv = beta.0;
    // y^(beta-1) and x/y need y > 0 for beta <= 1; log(x/y) needs x > 0 at beta = 0,
    // x^beta needs x > 0 for beta < 0.
    let need_pos_y = bv <= 1.0;
    let need_pos_x = bv <= 0.0;
    let mut total = 0.0;
    for ((i, j), &x) in a.indexed_iter() {
        let y = b[[i, j]];
        let bad = |reason: &str| Error::Domain {
            row: i,
            col: j,
            reason: reason.to_string(),
        };
        if !(x >= 0.0) || !x.is_finite() {
            return Err(bad("first argument must be finite and nonnegative"));
        }
        if !(y >= 0.0) || !y.is_finite() {
            return Err(bad("second argument must be finite and nonnegative"));
        }
        if need_pos_y && y == 0.0 {
            return Err(bad("second argument must be strictly positive for beta <= 1"));
        }
        if need_pos_x && x == 0.0 {
            return Err(bad("first argument must be strictly positive for beta <= 0"));
        }
        total += scalar_beta_divergence(x, y, beta);
    }
    Ok(total)
}

/// Itakura-Saito divergence with both arguments clamped to `floor` before
/// evaluation. This is the form the solvers track: multiplicative updates
/// keep exact zeros, and synthetic data contain zero entries.
pub fn is_divergence_floored(x: &Array2<f64>, y: &Array2<f64>, floor: f64) -> Result<f64> {
    check_same_shape(&x.view(), &y.view())?;
    let mut total = 0.0;
    Zip::from(x).and(y).for_each(|&xv, &yv| {
        total += is_scalar(xv.max(floor), yv.max(floor));
    });
    Ok(total)
}

/// Diversity measure `J(A) = sum_i ||A_i:||_1^2`, evaluated as squared row sums.
pub fn diversity_j(a: &Array2<f64>) -> Result<f64> {
    if let Some(((i, j), _)) = a.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain {
            row: i,
            col: j,
            reason: "diversity measure requires a nonnegative matrix".into(),
        });
    }
    Ok(a.rows().into_iter().map(|row| row.sum().powi(2)).sum())
}

/// `sum_l lambda_l^2 * ||H_l:||_1^2`, the trace penalty `Tr(Diag(lambda)^2 H E H^T)`
/// evaluated row by row.
pub fn row_penalty(h: &Array2<f64>, lambda: &[f64]) -> Result<f64> {
    if h.nrows() != lambda.len() {
        return Err(Error::Dimension(format!(
            "H has {} rows but lambda has {} entries",
            h.nrows(),
            lambda.len()
        )));
    }
    Ok(h.rows()
        .into_iter()
        .zip(lambda)
        .map(|(row, &l)| l * l * row.sum().powi(2))
        .sum())
}

/// Full objective `D_0(X, WH) + sum_l lambda_l^2 ||H_l:||_1^2`.
///
/// The fit is evaluated on `max(X, floor)` and `max(WH, floor)`.
pub fn penalized_objective(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda: &[f64],
    floor: f64,
) -> Result<ObjectiveValue> {
    if w.ncols() != h.nrows() || x.nrows() != w.nrows() || x.ncols() != h.ncols() {
        return Err(Error::Dimension(format!(
            "X {:?}, W {:?}, H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain {
            row: i,
            col: j,
            reason: "data matrix must be nonnegative".into(),
        });
    }
    let wh = w.dot(h);
    let fit = is_divergence_floored(x, &wh, floor)?;
    let penalty = row_penalty(h, lambda)?;
    Ok(ObjectiveValue::new(fit, penalty))
}

/// `|curr - prev| / |prev|`, with `0/0 = 0` and `x/0 = +inf` for `x != 0`.
pub fn relative_objective_change(prev: f64, curr: f64) -> f64 {
    let diff = (curr - prev).abs();
    if prev == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / prev.abs()
    }
}
