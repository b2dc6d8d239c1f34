//! Factor pairs, initializations, multiplicative updates and the
//! fixed-penalty baseline solver.

use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::divergence::{penalized_objective, relative_objective_change, DEFAULT_FLOOR};
use crate::row::RowSubproblem;
use crate::{Error, ObjectiveValue, Result};

/// Nonnegative factors `W` (m x r) and `H` (r x n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl FactorPair {
    /// Validates shapes, finiteness and nonnegativity.
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::Dimension(format!("W {:?}, H {:?}", w.dim(), h.dim())));
        }
        let r = w.ncols();
        if r == 0 || r > w.nrows().min(h.ncols()) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} must lie in 1..=min({}, {})",
                w.nrows(),
                h.ncols()
            )));
        }
        check_nonneg(&w, "W")?;
        check_nonneg(&h, "H")?;
        Ok(Self { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

fn check_nonneg(a: &Array2<f64>, name: &str) -> Result<()> {
    match a.indexed_iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        Some(((i, j), v)) => Err(Error::Domain {
            row: i,
            col: j,
            reason: format!("{name} entry {v} is not finite and nonnegative"),
        }),
        None => Ok(()),
    }
}

fn ensure_finite(a: &Array2<f64>, context: &str) -> Result<()> {
    match a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((i, j), v)) => Err(Error::numeric(
            context,
            format!("non-finite value {v} at ({i}, {j})"),
        )),
        None => Ok(()),
    }
}

/// How the penalty vector is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// The same constant penalty on every row.
    Fixed(f64),
    /// One penalty per row, tuned by hypergradient descent.
    PerRowAdaptive,
}

/// Multiplicative rule used for `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WUpdateRule {
    /// `W .* (X H^T) ./ (W H H^T)`
    #[default]
    PaperEuclidean,
    /// `W .* ((WH)^-2 .* X) H^T ./ ((WH)^-1 H^T)`
    IsDivergence,
}

/// When the penalty vector is stepped during an outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// Step `lambda_l` right after row `l`'s inner loop.
    #[default]
    PerRow,
    /// Step the whole vector after all rows are done.
    Batched,
}

/// Jacobian used to propagate `dh/dlambda` through the row dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Diagonal plus the rank-one `||h||_1` coupling; exact derivative of the
    /// unrolled row dynamics.
    #[default]
    Exact,
    /// Diagonal only.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rank: usize,
    pub max_outer_iters: usize,
    pub inner_iters: usize,
    pub tol: f64,
    pub lambda_mode: LambdaMode,
    pub step_alpha: f64,
    pub seed: u64,
    pub w_update_rule: WUpdateRule,
    pub floor: f64,
    pub lambda_schedule: LambdaSchedule,
    pub jacobian: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            max_outer_iters: 500,
            inner_iters: 4,
            tol: 1e-6,
            lambda_mode: LambdaMode::PerRowAdaptive,
            step_alpha: 1e-3,
            seed: 0,
            w_update_rule: WUpdateRule::PaperEuclidean,
            floor: DEFAULT_FLOOR,
            lambda_schedule: LambdaSchedule::PerRow,
            jacobian: JacobianMode::Exact,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.rank == 0 {
            return bad("rank must be positive");
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be positive");
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.step_alpha > 0.0) {
            return bad("step_alpha must be positive");
        }
        if !(self.floor > 0.0) {
            return bad("floor must be positive");
        }
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("fixed lambda must be finite and nonnegative");
            }
        }
        Ok(())
    }
}

/// One outer iteration of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: ObjectiveValue,
    /// Frobenius fit `||X - WH||_F^2` after the iteration.
    pub response: f64,
    pub lambda: Vec<f64>,
    /// Wall-clock seconds since the run started.
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    /// Objective at the initial factors, before any update.
    pub initial: Option<ObjectiveValue>,
    pub records: Vec<TraceRecord>,
    /// Whether the relative-change tolerance stopped the run.
    pub converged: bool,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Equality of every recorded value except wall-clock time.
    pub fn same_values(&self, other: &RunTrace) -> bool {
        self.initial == other.initial
            && self.converged == other.converged
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.objective == b.objective
                    && a.response == b.response
                    && a.lambda == b.lambda
            })
    }
}

fn check_conformal(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Result<()> {
    if w.ncols() != h.nrows() || x.nrows() != w.nrows() || x.ncols() != h.ncols() {
        return Err(Error::Dimension(format!(
            "X {:?}, W {:?}, H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    Ok(())
}

fn floored(a: &Array2<f64>, floor: f64) -> Array2<f64> {
    a.mapv(|v| v.max(floor))
}

/// `target .* numer ./ max(denom, floor)`
fn mu_ratio(target: &Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>, floor: f64) -> Array2<f64> {
    let mut out = target.clone();
    Zip::from(&mut out)
        .and(numer)
        .and(denom)
        .for_each(|o, &n, &d| *o *= n / d.max(floor));
    out
}

/// Multiplicative update of `W` with `H` fixed.
pub fn update_w(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    rule: WUpdateRule,
    floor: f64,
) -> Result<Array2<f64>> {
    check_conformal(x, w, h)?;
    let ht = h.t();
    let out = match rule {
        WUpdateRule::PaperEuclidean => {
            let numer = x.dot(&ht);
            let denom = w.dot(&h.dot(&ht));
            mu_ratio(w, &numer, &denom, floor)
        }
        WUpdateRule::IsDivergence => {
            let v = floored(&w.dot(h), floor);
            let weighted = Zip::from(x).and(&v).map_collect(|&xv, &vv| xv / (vv * vv));
            let numer = weighted.dot(&ht);
            let denom = v.mapv(f64::recip).dot(&ht);
            mu_ratio(w, &numer, &denom, floor)
        }
    };
    ensure_finite(&out, "W update")?;
    Ok(out)
}

/// Penalized multiplicative update of all of `H`:
///
/// ```text
/// H .* [W^T (V^-2 .* X)] ./ [W^T V^-1 + 2 Diag(lambda)^2 H E],   V = max(WH, floor)
/// ```
pub fn update_h_full(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda: &[f64],
    floor: f64,
) -> Result<Array2<f64>> {
    check_conformal(x, w, h)?;
    if lambda.len() != h.nrows() {
        return Err(Error::Dimension(format!(
            "lambda has {} entries for {} rows",
            lambda.len(),
            h.nrows()
        )));
    }
    let v = floored(&w.dot(h), floor);
    let weighted = Zip::from(x).and(&v).map_collect(|&xv, &vv| xv / (vv * vv));
    let numer = w.t().dot(&weighted);
    let mut denom = w.t().dot(&v.mapv(f64::recip));
    for ((mut drow, hrow), &lam) in denom
        .axis_iter_mut(Axis(0))
        .zip(h.axis_iter(Axis(0)))
        .zip(lambda)
    {
        let pen = 2.0 * lam * lam * hrow.sum();
        drow.mapv_inplace(|d| d + pen);
    }
    let out = mu_ratio(h, &numer, &denom, floor);
    ensure_finite(&out, "H update")?;
    Ok(out)
}

/// Row-wise penalized update of row `l`, with `h_l` standing in for `H_l:` and
/// every other row of `H` fixed.
pub fn update_h_row(
    h_l: ArrayView1<f64>,
    l: usize,
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda_l: f64,
    floor: f64,
) -> Result<Array1<f64>> {
    let sub = RowSubproblem::new(x, w, h, l, floor)?;
    if h_l.len() != sub.len() {
        return Err(Error::Dimension(format!(
            "row has {} entries, expected {}",
            h_l.len(),
            sub.len()
        )));
    }
    let out = sub.step(h_l, lambda_l);
    if let Some((j, v)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numeric(
            format!("H row {l} update"),
            format!("non-finite value {v} at column {j}"),
        ));
    }
    Ok(out)
}

/// Rescales every column of `W` to unit maximum and moves the scale into the
/// matching row of `H`, leaving `WH` unchanged.
pub fn normalize(w: &Array2<f64>, h: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!("W {:?}, H {:?}", w.dim(), h.dim())));
    }
    let mut w2 = w.clone();
    let mut h2 = h.clone();
    for k in 0..w.ncols() {
        let m = w.column(k).fold(0.0f64, |a, &b| a.max(b));
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::numeric(
                format!("normalize component {k}"),
                "column of W has no positive entry (degenerate component)",
            ));
        }
        w2.column_mut(k).mapv_inplace(|v| v / m);
        h2.row_mut(k).mapv_inplace(|v| v * m);
    }
    Ok((w2, h2))
}

/// Nonnegative double SVD initialization.
///
/// Each of the leading `r` singular pairs `(u, v)` is split into positive and
/// negative parts; the pair of parts with the larger norm product is kept and
/// scaled by the square root of `sigma` times that product. Zero entries are
/// replaced by `floor`.
pub fn nndsvd_init(x: &Array2<f64>, r: usize, floor: f64) -> Result<FactorPair> {
    let (m, n) = x.dim();
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} must lie in 1..=min({m}, {n})"
        )));
    }
    check_nonneg(x, "X")?;
    let mat = DMatrix::from_fn(m, n, |i, j| x[[i, j]]);
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numeric("NNDSVD", "SVD failed to converge"))?;
    let u = svd.u.ok_or_else(|| Error::numeric("NNDSVD", "missing U"))?;
    let vt = svd.v_t.ok_or_else(|| Error::numeric("NNDSVD", "missing V^T"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut w = Array2::zeros((m, r));
    let mut h = Array2::zeros((r, n));
    for (k, &idx) in order.iter().take(r).enumerate() {
        let sigma = svd.singular_values[idx];
        let uk: Vec<f64> = (0..m).map(|i| u[(i, idx)]).collect();
        let vk: Vec<f64> = (0..n).map(|j| vt[(idx, j)]).collect();
        let (uc, vc, scale) = if k == 0 {
            // The leading pair of a nonnegative matrix is sign-consistent.
            let flip = if uk.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let uc: Vec<f64> = uk.iter().map(|v| (flip * v).max(0.0)).collect();
            let vc: Vec<f64> = vk.iter().map(|v| (flip * v).max(0.0)).collect();
            (uc, vc, sigma.sqrt())
        } else {
            let pos = |v: &[f64]| v.iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
            let neg = |v: &[f64]| v.iter().map(|a| (-a).max(0.0)).collect::<Vec<_>>();
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let (up, un, vp, vn) = (pos(&uk), neg(&uk), pos(&vk), neg(&vk));
            let (nup, nun, nvp, nvn) = (norm(&up), norm(&un), norm(&vp), norm(&vn));
            let (mp, mn) = (nup * nvp, nun * nvn);
            let (a, na, b, nb, mm) = if mp >= mn {
                (up, nup, vp, nvp, mp)
            } else {
                (un, nun, vn, nvn, mn)
            };
            if mm == 0.0 {
                (vec![0.0; m], vec![0.0; n], 0.0)
            } else {
                let a = a.iter().map(|v| v / na).collect();
                let b = b.iter().map(|v| v / nb).collect();
                (a, b, (sigma * mm).sqrt())
            }
        };
        for i in 0..m {
            w[[i, k]] = scale * uc[i];
        }
        for j in 0..n {
            h[[k, j]] = scale * vc[j];
        }
    }
    w.mapv_inplace(|v| if v <= 0.0 { floor } else { v });
    h.mapv_inplace(|v| if v <= 0.0 { floor } else { v });
    FactorPair::new(w, h)
}

/// Draws `W` and `H` with entries `(1.5 * max(g, 0) + 0.5) / 2`, `g ~ N(0, 1)`.
pub fn truncated_gaussian_init(m: usize, n: usize, r: usize, seed: u64) -> Result<FactorPair> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows, cols| {
        Array2::from_shape_simple_fn((rows, cols), || {
            let g: f64 = StandardNormal.sample(&mut rng);
            (1.5 * g.max(0.0) + 0.5) / 2.0
        })
    };
    let w = draw(m, r);
    let h = draw(r, n);
    FactorPair::new(w, h)
}

/// Fixed-penalty multiplicative updates: `W`, then all of `H` with
/// `lambda = value * 1`, then normalization, until the relative change of the
/// Itakura-Saito fit drops to `tol` or `max_outer_iters` is reached.
pub fn run_mu(x: &Array2<f64>, config: &SolverConfig, init: &FactorPair) -> Result<(FactorPair, RunTrace)> {
    config.validate()?;
    let value = match config.lambda_mode {
        LambdaMode::Fixed(v) => v,
        LambdaMode::PerRowAdaptive => {
            return Err(Error::InvalidArgument(
                "run_mu needs a fixed lambda; use run_shinbo for adaptive penalties".into(),
            ))
        }
    };
    check_conformal(x, &init.w, &init.h)?;
    check_nonneg(x, "X")?;
    let lambda = vec![value; init.rank()];
    let floor = config.floor;
    let start = Instant::now();
    let mut w = init.w.clone();
    let mut h = init.h.clone();
    let initial = penalized_objective(x, &w, &h, &lambda, floor)?;
    let mut trace = RunTrace {
        initial: Some(initial),
        ..Default::default()
    };
    let mut prev_fit = initial.fit;
    for k in 1..=config.max_outer_iters {
        let ctx = |e: Error| e.with_context(format!("iteration {k}"));
        w = update_w(x, &w, &h, config.w_update_rule, floor).map_err(ctx)?;
        h = update_h_full(x, &w, &h, &lambda, floor).map_err(ctx)?;
        (w, h) = normalize(&w, &h).map_err(ctx)?;
        let objective = penalized_objective(x, &w, &h, &lambda, floor)?;
        trace.records.push(TraceRecord {
            iter: k,
            objective,
            response: frobenius_fit(x, &w, &h),
            lambda: lambda.clone(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if relative_objective_change(prev_fit, objective.fit) <= config.tol {
            trace.converged = true;
            break;
        }
        prev_fit = objective.fit;
    }
    Ok((FactorPair { w, h }, trace))
}

/// `||X - WH||_F^2`
pub fn frobenius_fit(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let wh = w.dot(h);
    Zip::from(x).and(&wh).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
}
