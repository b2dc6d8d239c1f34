//! Per-row view of the H subproblem.
//!
//! With every row of `H` except row `l` held fixed, the reconstruction is
//! `V = O + w_l h`, where `O = sum_{j != l} w_j h_j`. Column `j` of `V`
//! depends on `h` only through `h_j`, so the row map
//!
//! ```text
//! Phi_j(h, lambda) = h_j * N_j(h_j) / D_j(h, lambda)
//! N_j = sum_i w_il x_ij / V_ij^2
//! D_j = sum_i w_il / V_ij + 2 lambda^2 ||h||_1
//! ```
//!
//! couples coordinates only through `||h||_1`. Its Jacobian is therefore a
//! diagonal plus a rank-one term, both computable in `O(mn)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Column statistics of one row subproblem evaluated at a given `h`.
#[derive(Debug, Clone)]
pub struct RowStats {
    /// `N_j = (W^T (V^-2 .* X))_lj`
    pub numer: Array1<f64>,
    /// `sum_i w_il / V_ij`, the penalty-free part of `D_j`
    pub inv_sum: Array1<f64>,
    /// `sum_i w_il^2 x_ij / V_ij^3` (zero where `V` was floored)
    pub cubic: Array1<f64>,
    /// `sum_i w_il^2 / V_ij^2` (zero where `V` was floored)
    pub square: Array1<f64>,
    /// `||h||_1`
    pub l1: f64,
}

/// Row `l` of the H subproblem with the remaining rows frozen.
#[derive(Debug, Clone)]
pub struct RowSubproblem<'a> {
    x: ArrayView2<'a, f64>,
    others: Array2<f64>,
    w_l: ArrayView1<'a, f64>,
    floor: f64,
}

impl<'a> RowSubproblem<'a> {
    /// Builds the subproblem for row `l` of `h`, using `w` as the dictionary.
    pub fn new(
        x: &'a Array2<f64>,
        w: &'a Array2<f64>,
        h: &Array2<f64>,
        l: usize,
        floor: f64,
    ) -> Result<Self> {
        let r = w.ncols();
        if h.nrows() != r || x.nrows() != w.nrows() || x.ncols() != h.ncols() {
            return Err(Error::Dimension(format!(
                "X {:?}, W {:?}, H {:?}",
                x.dim(),
                w.dim(),
                h.dim()
            )));
        }
        if l >= r {
            return Err(Error::InvalidArgument(format!(
                "row index {l} out of range for rank {r}"
            )));
        }
        Ok(Self {
            x: x.view(),
            others: other_components(w, h, l)?,
            w_l: w.column(l),
            floor,
        })
    }

    pub fn others(&self) -> &Array2<f64> {
        &self.others
    }

    pub fn w_l(&self) -> ArrayView1<'a, f64> {
        self.w_l
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Accumulates the column statistics at `h`.
    pub fn stats(&self, h: ArrayView1<f64>) -> RowStats {
        let n = self.x.ncols();
        let mut numer = Array1::zeros(n);
        let mut inv_sum = Array1::zeros(n);
        let mut cubic = Array1::zeros(n);
        let mut square = Array1::zeros(n);
        for (i, (xrow, orow)) in self.x.rows().into_iter().zip(self.others.rows()).enumerate() {
            let wi = self.w_l[i];
            if wi == 0.0 {
                continue;
            }
            let wi2 = wi * wi;
            for j in 0..n {
                let raw = orow[j] + wi * h[j];
                let floored = raw < self.floor;
                let v = if floored { self.floor } else { raw };
                let inv = 1.0 / v;
                let inv2 = inv * inv;
                let xv = xrow[j];
                numer[j] += wi * xv * inv2;
                inv_sum[j] += wi * inv;
                if !floored {
                    cubic[j] += wi2 * xv * inv2 * inv;
                    square[j] += wi2 * inv2;
                }
            }
        }
        RowStats {
            numer,
            inv_sum,
            cubic,
            square,
            l1: h.sum(),
        }
    }

    /// Full denominator `D_j = inv_sum_j + 2 lambda^2 ||h||_1`, floored.
    pub fn denominator(&self, stats: &RowStats, lambda: f64) -> Array1<f64> {
        let pen = 2.0 * lambda * lambda * stats.l1;
        stats.inv_sum.mapv(|s| (s + pen).max(self.floor))
    }

    /// One multiplicative step `Phi(h, lambda)`.
    pub fn step(&self, h: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
        let stats = self.stats(h);
        self.step_from(h, &stats, lambda)
    }

    pub(crate) fn step_from(&self, h: ArrayView1<f64>, stats: &RowStats, lambda: f64) -> Array1<f64> {
        let den = self.denominator(stats, lambda);
        let mut out = h.to_owned();
        out.iter_mut()
            .zip(stats.numer.iter().zip(den.iter()))
            .for_each(|(hj, (&nj, &dj))| *hj *= nj / dj);
        out
    }

    /// Diagonal of `dPhi/dh`:
    ///
    /// ```text
    /// A_jj = N_j/D_j - h_j (2 C_j D_j - N_j S_j + 2 lambda^2 N_j) / D_j^2
    /// ```
    ///
    /// with `C_j = sum_i w_il^2 x_ij / V_ij^3` and `S_j = sum_i w_il^2 / V_ij^2`.
    /// The printed form of this expression indexes the squared reconstruction in
    /// `S_j` by `(l, j)`; the derivative needs `(i, j)`.
    pub fn jacobian_diag(&self, h: ArrayView1<f64>, stats: &RowStats, lambda: f64) -> Array1<f64> {
        let den = self.denominator(stats, lambda);
        let lam2 = lambda * lambda;
        Array1::from_iter((0..h.len()).map(|j| {
            let (nj, dj) = (stats.numer[j], den[j]);
            nj / dj
                - h[j] * (2.0 * stats.cubic[j] * dj - nj * stats.square[j] + 2.0 * lam2 * nj)
                    / (dj * dj)
        }))
    }

    /// Off-diagonal coupling of `dPhi/dh`: for `k != j`,
    /// `dPhi_j/dh_k = c_j = -2 lambda^2 h_j N_j / D_j^2`, the same for every `k`.
    pub fn coupling(&self, h: ArrayView1<f64>, stats: &RowStats, lambda: f64) -> Array1<f64> {
        let den = self.denominator(stats, lambda);
        let lam2 = lambda * lambda;
        Array1::from_iter(
            (0..h.len()).map(|j| -2.0 * lam2 * h[j] * stats.numer[j] / (den[j] * den[j])),
        )
    }

    /// `dPhi/dlambda`, entry `j`: `-4 lambda h_j ||h||_1 N_j / D_j^2`.
    ///
    /// The printed form has `h_j^2` in place of `h_j ||h||_1`; differentiating
    /// `D_j = ... + 2 lambda^2 ||h||_1` gives the latter.
    pub fn sensitivity(&self, h: ArrayView1<f64>, stats: &RowStats, lambda: f64) -> Array1<f64> {
        let den = self.denominator(stats, lambda);
        Array1::from_iter((0..h.len()).map(|j| {
            -4.0 * lambda * h[j] * stats.l1 * stats.numer[j] / (den[j] * den[j])
        }))
    }

    /// Response `||X - O - w_l h||_F^2`.
    pub fn response(&self, h: ArrayView1<f64>) -> f64 {
        response_row(&self.x, &self.others.view(), &self.w_l, &h)
    }

    /// Gradient of [`Self::response`] in `h`: `-2 w_l^T (X - O - w_l h)`.
    pub fn outer_gradient(&self, h: ArrayView1<f64>) -> Array1<f64> {
        outer_gradient(&self.x, &self.others.view(), &self.w_l, &h)
    }
}

/// `sum_{j != l} w_j h_j`, the reconstruction contributed by every component
/// except `l`.
pub fn other_components(w: &Array2<f64>, h: &Array2<f64>, l: usize) -> Result<Array2<f64>> {
    if w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!("W {:?}, H {:?}", w.dim(), h.dim())));
    }
    if l >= w.ncols() {
        return Err(Error::InvalidArgument(format!(
            "row index {l} out of range for rank {}",
            w.ncols()
        )));
    }
    let mut out = Array2::zeros((w.nrows(), h.ncols()));
    for k in (0..w.ncols()).filter(|&k| k != l) {
        add_outer(&mut out, w.column(k), h.row(k), 1.0);
    }
    Ok(out)
}

/// `target += scale * u v^T`.
pub(crate) fn add_outer(target: &mut Array2<f64>, u: ArrayView1<f64>, v: ArrayView1<f64>, scale: f64) {
    for (mut row, &ui) in target.rows_mut().into_iter().zip(u.iter()) {
        let a = scale * ui;
        if a == 0.0 {
            continue;
        }
        row.iter_mut().zip(v.iter()).for_each(|(t, &vj)| *t += a * vj);
    }
}

pub(crate) fn response_row(
    x: &ArrayView2<f64>,
    others: &ArrayView2<f64>,
    w_l: &ArrayView1<f64>,
    h: &ArrayView1<f64>,
) -> f64 {
    let mut total = 0.0;
    for ((xrow, orow), &wi) in x.rows().into_iter().zip(others.rows()).zip(w_l.iter()) {
        for j in 0..xrow.len() {
            let e = xrow[j] - orow[j] - wi * h[j];
            total += e * e;
        }
    }
    total
}

pub(crate) fn outer_gradient(
    x: &ArrayView2<f64>,
    others: &ArrayView2<f64>,
    w_l: &ArrayView1<f64>,
    h: &ArrayView1<f64>,
) -> Array1<f64> {
    let mut g = Array1::zeros(h.len());
    for ((xrow, orow), &wi) in x.rows().into_iter().zip(others.rows()).zip(w_l.iter()) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..xrow.len() {
            g[j] -= 2.0 * wi * (xrow[j] - orow[j] - wi * h[j]);
        }
    }
    g
}
