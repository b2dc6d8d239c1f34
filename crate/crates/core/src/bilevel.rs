//! Bi-level tuning of the row penalties.
//!
//! For a fixed `W`, row `l` of `H` is advanced by `T` steps of the penalized
//! multiplicative map `Phi(h, lambda_l)` starting from its current value. The
//! sensitivity `s^t = dh^t/dlambda_l` is carried forward with
//!
//! ```text
//! s^t = A_t s^{t-1} + b_t,    A_t = dPhi/dh (h^{t-1}),    b_t = dPhi/dlambda (h^{t-1})
//! ```
//!
//! and the hypergradient of the response `r(lambda_l) = ||X - O - w_l h^T||_F^2`
//! is `<g, s^T>` with `g = -2 w_l^T (X - O - w_l h^T)`. The penalty then takes a
//! projected gradient step `lambda_l <- max(lambda_l - alpha * grad, 0)`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{penalized_objective, relative_objective_change};
use crate::factor::{frobenius_fit, normalize, update_w, FactorPair, RunTrace, TraceRecord};
use crate::row::{self, RowSubproblem};
use crate::{Error, JacobianMode, LambdaMode, LambdaSchedule, Result, SolverConfig};

/// One nonnegative penalty per row of `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyVector(Vec<f64>);

impl PenaltyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain {
                row: i,
                col: 0,
                reason: format!("penalty {v} must be finite and nonnegative"),
            });
        }
        Ok(Self(values))
    }

    /// `lambda_l ~ U[0, 1)` independently, from a stream reserved for penalties.
    pub fn sample_uniform(r: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self((0..r).map(|_| rng.random::<f64>()).collect())
    }

    pub fn constant(r: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; r])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Forward-mode state for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct FmdState {
    /// `s^t = dh^t / dlambda_l`
    pub s: Array1<f64>,
    /// Diagonal of `A_t` used for the last step.
    pub a_diag: Array1<f64>,
    /// `b_t` used for the last step.
    pub b: Array1<f64>,
}

impl FmdState {
    /// Base case `s^0 = b_0`, where `b_0` is the derivative of the initial
    /// value map. A warm start from the previous outer iterate does not depend
    /// on `lambda_l`, so `b_0 = 0` in the solver.
    pub fn initial(b0: Array1<f64>) -> Self {
        let n = b0.len();
        Self {
            s: b0.clone(),
            a_diag: Array1::zeros(n),
            b: b0,
        }
    }
}

/// `s^t = A_diag .* s^{t-1} + b`.
pub fn fmd_step(state: &FmdState, a_diag: Array1<f64>, b: Array1<f64>) -> Result<FmdState> {
    let n = state.s.len();
    if a_diag.len() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "state {n}, A {}, b {}",
            a_diag.len(),
            b.len()
        )));
    }
    let s = &a_diag * &state.s + &b;
    Ok(FmdState { s, a_diag, b })
}

/// `s^t = (Diag(a) + c 1^T - Diag(c)) s^{t-1} + b`: the full row Jacobian,
/// whose off-diagonal part is the rank-one `||h||_1` coupling.
pub fn fmd_step_coupled(
    state: &FmdState,
    a_diag: Array1<f64>,
    coupling: &Array1<f64>,
    b: Array1<f64>,
) -> Result<FmdState> {
    if coupling.len() != state.s.len() {
        return Err(Error::Dimension(format!(
            "state {}, coupling {}",
            state.s.len(),
            coupling.len()
        )));
    }
    let total = state.s.sum();
    let mut next = fmd_step(state, a_diag, b)?;
    next.s
        .iter_mut()
        .zip(coupling.iter().zip(state.s.iter()))
        .for_each(|(sj, (&cj, &prev))| *sj += cj * (total - prev));
    Ok(next)
}

/// Per-row response values and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub per_row: Vec<f64>,
    pub total: f64,
}

impl ResponseReport {
    pub fn from_rows(per_row: Vec<f64>) -> Self {
        let total = per_row.iter().sum();
        Self { per_row, total }
    }
}

/// `R = X - sum_{j != l} w_j h_j`.
pub fn residual(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>, l: usize) -> Result<Array2<f64>> {
    if x.nrows() != w.nrows() || x.ncols() != h.ncols() {
        return Err(Error::Dimension(format!(
            "X {:?}, W {:?}, H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    Ok(x - &row::other_components(w, h, l)?)
}

fn check_row_shapes(x: &Array2<f64>, others: &Array2<f64>, w_l: ArrayView1<f64>, h_l: ArrayView1<f64>) -> Result<()> {
    if x.dim() != others.dim() || w_l.len() != x.nrows() || h_l.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "X {:?}, other components {:?}, w_l {}, h_l {}",
            x.dim(),
            others.dim(),
            w_l.len(),
            h_l.len()
        )));
    }
    Ok(())
}

/// Response `D_2(X, O + w_l h_l) = ||X - O - w_l h_l||_F^2`, where `O` is the
/// reconstruction from the other components (`X - residual`).
pub fn response_row(
    x: &Array2<f64>,
    others: &Array2<f64>,
    w_l: ArrayView1<f64>,
    h_l: ArrayView1<f64>,
) -> Result<f64> {
    check_row_shapes(x, others, w_l, h_l)?;
    Ok(row::response_row(&x.view(), &others.view(), &w_l, &h_l))
}

/// `g = -2 w_l^T (X - O - w_l h_l)`, the gradient of [`response_row`] in `h_l`.
pub fn outer_gradient_g(
    x: &Array2<f64>,
    others: &Array2<f64>,
    w_l: ArrayView1<f64>,
    h_l: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_row_shapes(x, others, w_l, h_l)?;
    Ok(row::outer_gradient(&x.view(), &others.view(), &w_l, &h_l))
}

/// Diagonal of `dPhi/dh_l` at `h_l` for row `l`.
pub fn jacobian_diag_a(
    h_l: ArrayView1<f64>,
    l: usize,
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda_l: f64,
    floor: f64,
) -> Result<Array1<f64>> {
    let sub = RowSubproblem::new(x, w, h, l, floor)?;
    let stats = sub.stats(h_l);
    check_finite(sub.jacobian_diag(h_l, &stats, lambda_l), l, "A")
}

/// `dPhi/dlambda_l` at `h_l` for row `l`.
pub fn sensitivity_b(
    h_l: ArrayView1<f64>,
    l: usize,
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda_l: f64,
    floor: f64,
) -> Result<Array1<f64>> {
    let sub = RowSubproblem::new(x, w, h, l, floor)?;
    let stats = sub.stats(h_l);
    check_finite(sub.sensitivity(h_l, &stats, lambda_l), l, "b")
}

fn check_finite(v: Array1<f64>, l: usize, what: &str) -> Result<Array1<f64>> {
    match v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        Some((j, x)) => Err(Error::numeric(
            format!("row {l}, column {j}"),
            format!("{what} entry overflowed to {x}"),
        )),
        None => Ok(v),
    }
}

/// `<g, s>`. The outer objective has no explicit dependence on `lambda_l`,
/// so the direct partial of the chain rule is zero.
pub fn hypergradient_row(g: ArrayView1<f64>, s: ArrayView1<f64>) -> Result<f64> {
    if g.len() != s.len() {
        return Err(Error::Dimension(format!("g {}, s {}", g.len(), s.len())));
    }
    const DIRECT_PARTIAL: f64 = 0.0;
    Ok(DIRECT_PARTIAL + g.dot(&s))
}

/// `lambda' = max(lambda - alpha * grad, 0)`.
pub fn update_lambda(lambda: &PenaltyVector, grad: &[f64], alpha: f64) -> Result<PenaltyVector> {
    if grad.len() != lambda.len() {
        return Err(Error::Dimension(format!(
            "lambda {}, gradient {}",
            lambda.len(),
            grad.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    Ok(PenaltyVector(
        lambda
            .0
            .iter()
            .zip(grad)
            .map(|(&l, &g)| (l - alpha * g).max(0.0))
            .collect(),
    ))
}

/// Result of `T` dynamical-system steps on one row.
#[derive(Debug, Clone)]
pub struct RowOutcome {
    pub h: Array1<f64>,
    pub sensitivity: Array1<f64>,
    pub hypergradient: f64,
    pub response: f64,
}

/// Runs `steps` row updates from `h0` with forward-mode propagation of
/// `dh/dlambda`, then assembles the hypergradient at the final iterate.
pub fn solve_row(
    sub: &RowSubproblem<'_>,
    h0: ArrayView1<f64>,
    lambda: f64,
    steps: usize,
    mode: JacobianMode,
) -> Result<RowOutcome> {
    let n = h0.len();
    let mut h = h0.to_owned();
    let mut state = FmdState::initial(Array1::zeros(n));
    for t in 1..=steps {
        let stats = sub.stats(h.view());
        let a = sub.jacobian_diag(h.view(), &stats, lambda);
        let b = sub.sensitivity(h.view(), &stats, lambda);
        state = match mode {
            JacobianMode::Diagonal => fmd_step(&state, a, b)?,
            JacobianMode::Exact => {
                let c = sub.coupling(h.view(), &stats, lambda);
                fmd_step_coupled(&state, a, &c, b)?
            }
        };
        h = sub.step_from(h.view(), &stats, lambda);
        if let Some((j, v)) = h.iter().zip(state.s.iter()).enumerate().find_map(|(j, (a, b))| {
            (!a.is_finite() || !b.is_finite()).then_some((j, a.max(*b)))
        }) {
            return Err(Error::numeric(
                format!("inner step {t}, column {j}"),
                format!("non-finite iterate or sensitivity ({v})"),
            ));
        }
    }
    let g = sub.outer_gradient(h.view());
    let hypergradient = hypergradient_row(g.view(), state.s.view())?;
    let response = sub.response(h.view());
    Ok(RowOutcome {
        h,
        sensitivity: state.s,
        hypergradient,
        response,
    })
}

/// Outcome of one bi-level pass over all rows with `W` fixed.
#[derive(Debug, Clone)]
pub struct SubproblemStep {
    pub h: Array2<f64>,
    pub lambda: PenaltyVector,
    pub hypergradient: Vec<f64>,
    pub response: ResponseReport,
}

/// Updates every row of `H` in order `l = 0..r` (each row sees the already
/// updated rows before it) and steps the penalties.
pub fn subproblem_step(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    lambda: &PenaltyVector,
    config: &SolverConfig,
) -> Result<SubproblemStep> {
    let r = w.ncols();
    if lambda.len() != r {
        return Err(Error::Dimension(format!(
            "lambda has {} entries for rank {r}",
            lambda.len()
        )));
    }
    let mut h = h.clone();
    let mut lam = lambda.clone();
    let mut grads = vec![0.0; r];
    let mut per_row = Vec::with_capacity(r);
    for l in 0..r {
        let sub = RowSubproblem::new(x, w, &h, l, config.floor)?;
        let out = solve_row(
            &sub,
            h.row(l),
            lam.0[l],
            config.inner_iters,
            config.jacobian,
        )
        .map_err(|e| e.with_context(format!("row {l}")))?;
        h.row_mut(l).assign(&out.h);
        grads[l] = out.hypergradient;
        per_row.push(out.response);
        if config.lambda_schedule == LambdaSchedule::PerRow {
            lam.0[l] = (lam.0[l] - config.step_alpha * out.hypergradient).max(0.0);
        }
    }
    if config.lambda_schedule == LambdaSchedule::Batched {
        lam = update_lambda(&lam, &grads, config.step_alpha)?;
    }
    Ok(SubproblemStep {
        h,
        lambda: lam,
        hypergradient: grads,
        response: ResponseReport::from_rows(per_row),
    })
}

#[derive(Debug, Clone)]
pub struct ShinboOutput {
    pub factors: FactorPair,
    pub lambda: PenaltyVector,
    pub trace: RunTrace,
    /// Per-row responses of the last outer iteration.
    pub response: ResponseReport,
}

/// Bi-level penalized factorization with `lambda^0 ~ U[0, 1]` drawn from
/// `config.seed`.
pub fn run_shinbo(x: &Array2<f64>, config: &SolverConfig, init: &FactorPair) -> Result<ShinboOutput> {
    let lambda0 = PenaltyVector::sample_uniform(init.rank(), config.seed);
    run_shinbo_with_lambda(x, config, init, lambda0)
}

/// Same as [`run_shinbo`] with an explicit starting penalty vector.
pub fn run_shinbo_with_lambda(
    x: &Array2<f64>,
    config: &SolverConfig,
    init: &FactorPair,
    lambda0: PenaltyVector,
) -> Result<ShinboOutput> {
    config.validate()?;
    if config.lambda_mode != LambdaMode::PerRowAdaptive {
        return Err(Error::InvalidArgument(
            "run_shinbo needs lambda_mode = per_row_adaptive".into(),
        ));
    }
    if x.nrows() != init.w.nrows() || x.ncols() != init.h.ncols() {
        return Err(Error::Dimension(format!(
            "X {:?}, W {:?}, H {:?}",
            x.dim(),
            init.w.dim(),
            init.h.dim()
        )));
    }
    if lambda0.len() != init.rank() {
        return Err(Error::Dimension(format!(
            "lambda has {} entries for rank {}",
            lambda0.len(),
            init.rank()
        )));
    }
    if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain {
            row: i,
            col: j,
            reason: "data matrix must be nonnegative".into(),
        });
    }
    let floor = config.floor;
    let start = Instant::now();
    let mut w = init.w.clone();
    let mut h = init.h.clone();
    let mut lambda = lambda0;
    let initial = penalized_objective(x, &w, &h, lambda.as_slice(), floor)?;
    let mut trace = RunTrace {
        initial: Some(initial),
        ..Default::default()
    };
    let mut response = ResponseReport::from_rows(vec![]);
    let mut prev_fit = initial.fit;
    for k in 1..=config.max_outer_iters {
        let ctx = |e: Error| e.with_context(format!("iteration {k}"));
        w = update_w(x, &w, &h, config.w_update_rule, floor).map_err(ctx)?;
        let step = subproblem_step(x, &w, &h, &lambda, config).map_err(ctx)?;
        h = step.h;
        lambda = step.lambda;
        response = step.response;
        (w, h) = normalize(&w, &h).map_err(ctx)?;
        let objective = penalized_objective(x, &w, &h, lambda.as_slice(), floor)?;
        trace.records.push(TraceRecord {
            iter: k,
            objective,
            response: frobenius_fit(x, &w, &h),
            lambda: lambda.as_slice().to_vec(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if relative_objective_change(prev_fit, objective.fit) <= config.tol {
            trace.converged = true;
            break;
        }
        prev_fit = objective.fit;
    }
    Ok(ShinboOutput {
        factors: FactorPair { w, h },
        lambda,
        trace,
        response,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn residual_examples() {
        let w = array![[1.0], [2.0]];
        let h = array![[0.5, 1.0, 1.5]];
        let x = array![[0.7, 1.0, 1.4], [1.1, 2.2, 3.1]];
        assert_eq!(residual(&x, &w, &h, 0).unwrap(), x);

        let w = array![[1.0, 0.3], [0.2, 0.9]];
        let h = array![[0.5, 1.0, 1.5], [0.4, 0.1, 0.2]];
        let x = w.dot(&h);
        let r = residual(&x, &w, &h, 1).unwrap();
        let expected = w.column(1).to_owned().insert_axis(ndarray::Axis(1)).dot(&h.row(1).insert_axis(ndarray::Axis(0)));
        assert!((&r - &expected).mapv(f64::abs).sum() < 1e-14);
        assert!(matches!(residual(&x, &w, &h, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn response_and_gradient_examples() {
        let w = array![[1.0], [2.0]];
        let h = array![[0.5, 1.0, 1.5]];
        let x = w.dot(&h);
        let zeros = Array2::zeros(x.dim());
        assert_eq!(response_row(&x, &zeros, w.column(0), h.row(0)).unwrap(), 0.0);
        let g = outer_gradient_g(&x, &zeros, w.column(0), h.row(0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let h0 = Array1::zeros(3);
        let full = x.mapv(|v| v * v).sum();
        assert_eq!(response_row(&x, &zeros, w.column(0), h0.view()).unwrap(), full);
        let w0 = Array1::zeros(2);
        let g = outer_gradient_g(&x, &zeros, w0.view(), h.row(0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fmd_step_examples() {
        let s0 = FmdState::initial(array![1.0, -2.0, 0.5]);
        let b = array![0.3, 0.1, -0.2];
        let next = fmd_step(&s0, Array1::zeros(3), b.clone()).unwrap();
        assert_eq!(next.s, b);
        let next = fmd_step(&s0, Array1::ones(3), Array1::zeros(3)).unwrap();
        assert_eq!(next.s, s0.s);
        assert!(fmd_step(&s0, Array1::ones(2), Array1::zeros(3)).is_err());
    }

    #[test]
    fn hypergradient_row_examples() {
        let g = array![1.0, 0.0, 0.0];
        assert_eq!(hypergradient_row(g.view(), Array1::zeros(3).view()).unwrap(), 0.0);
        assert_eq!(hypergradient_row(g.view(), array![1.0, 0.0, 0.0].view()).unwrap(), 1.0);
        assert!(hypergradient_row(g.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn update_lambda_examples() {
        let l = PenaltyVector::new(vec![0.3, 0.1, 1.0]).unwrap();
        assert_eq!(update_lambda(&l, &[0.0; 3], 0.2).unwrap(), l);
        let out = update_lambda(&l, &[0.0, 1.0, 0.5], 0.2).unwrap();
        assert_eq!(out.as_slice()[1], 0.0);
        assert_relative_eq!(out.as_slice()[2], 0.9, epsilon = 1e-15);
        assert!(update_lambda(&l, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn penalty_vector_rejects_negative() {
        assert!(PenaltyVector::new(vec![0.1, -0.2]).is_err());
        let s = PenaltyVector::sample_uniform(5, 3);
        assert!(s.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert_eq!(s, PenaltyVector::sample_uniform(5, 3));
    }

    #[test]
    fn sensitivity_vanishes_without_penalty_or_row() {
        let w = array![[1.0, 0.3], [0.2, 0.9], [0.5, 0.5]];
        let h = array![[0.5, 1.0, 1.5, 0.2], [0.4, 0.1, 0.2, 0.8]];
        let x = w.dot(&h) + 0.05;
        let b = sensitivity_b(h.row(0), 0, &x, &w, &h, 0.0, 1e-12).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
        let z = Array1::zeros(4);
        let b = sensitivity_b(z.view(), 0, &x, &w, &h, 0.7, 1e-12).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
        // h_lj = 0: A_jj reduces to N_j / D_j.
        let mut hz = h.clone();
        hz[[0, 2]] = 0.0;
        let a = jacobian_diag_a(hz.row(0), 0, &x, &w, &hz, 0.3, 1e-12).unwrap();
        let sub = RowSubproblem::new(&x, &w, &hz, 0, 1e-12).unwrap();
        let st = sub.stats(hz.row(0));
        let d = sub.denominator(&st, 0.3);
        assert_relative_eq!(a[2], st.numer[2] / d[2], epsilon = 1e-14);
    }
}
