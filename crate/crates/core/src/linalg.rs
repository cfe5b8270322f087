//! Dense linear algebra: Cholesky factorisation, the LS-SVM saddle-point
//! system, and a dense convex QP solver.
//!
//! The QP solver is the Goldfarb–Idnani dual active-set method. It starts from
//! the unconstrained minimiser and adds violated constraints one at a time,
//! maintaining `J = L⁻ᵀQ` and the triangular factor `R` of the active normals
//! with Givens rotations, so every working-set change is an O(n²) update of
//! the factorisation rather than a fresh factorisation.
//!
//! Solves
//!
//! ```text
//! min ½ zᵀHz + gᵀz   s.t.  A z = b,   C z ≥ d
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate labels: both classes are required")]
    DegenerateLabels,
}

/// Lower-triangular Cholesky factor, row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix given row-major (only the lower triangle is read).
    pub fn factor_slice(n: usize, a: &[f64]) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::Dimension(format!("{} entries for n = {n}", a.len())));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
                let v = a[i * n + j] - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i });
                    }
                    l[i * n + i] = v.sqrt();
                } else {
                    l[i * n + j] = v / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn factor(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::Dimension(format!("{}x{} not square", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        let mut rm = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rm[i * n + j] = a[(i, j)];
            }
        }
        Self::factor_slice(n, &rm)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest squared diagonal entry of `L`.
    pub fn min_pivot_sq(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].powi(2)).fold(f64::INFINITY, f64::min)
    }

    /// Row `i` of `L` up to (excluding) the diagonal.
    fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..i * self.n + i]
    }

    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solve `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            b[i] /= self.l[i * n + i];
            let bi = b[i];
            let row = &self.l[i * n..i * n + i];
            for (bk, &lik) in b[..i].iter_mut().zip(row) {
                *bk -= lik * bi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }
}

/// Solve `A X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if b.nrows() != a.nrows() {
        return Err(LinalgError::Dimension(format!(
            "rhs has {} rows, matrix {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let ch = Cholesky::factor(a)?;
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        ch.solve_in_place(&mut v);
        col.copy_from_slice(&v);
    }
    Ok(x)
}

/// Solution `(b, α)` of the LS-SVM block system.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleSolution {
    pub b: f64,
    pub alpha: DVector<f64>,
}

/// Solve `[[0, −Γᵀ], [Γ, ZZᵀ + I/τ]] [b; α] = [0; 1]` through the Schur
/// complement on the positive definite block.
pub fn solve_saddle(z: &DMatrix<f64>, labels: &[f64], tau: f64) -> Result<SaddleSolution, LinalgError> {
    let nd = z.nrows();
    if labels.len() != nd {
        return Err(LinalgError::Dimension(format!("{} labels for {nd} rows", labels.len())));
    }
    let has_pos = labels.iter().any(|&l| l > 0.0);
    let has_neg = labels.iter().any(|&l| l < 0.0);
    if !has_pos || !has_neg {
        return Err(LinalgError::DegenerateLabels);
    }
    let mut m = z * z.transpose();
    for i in 0..nd {
        m[(i, i)] += 1.0 / tau;
    }
    let ch = Cholesky::factor(&m)?;
    let mut s1 = vec![1.0; nd];
    ch.solve_in_place(&mut s1);
    let mut s2 = labels.to_vec();
    ch.solve_in_place(&mut s2);
    let g1: f64 = labels.iter().zip(&s1).map(|(g, s)| g * s).sum();
    let g2: f64 = labels.iter().zip(&s2).map(|(g, s)| g * s).sum();
    if g2.abs() <= 1e-300 {
        return Err(LinalgError::DegenerateLabels);
    }
    let b = g1 / g2;
    let alpha = DVector::from_iterator(nd, s1.iter().zip(&s2).map(|(a, c)| a - b * c));
    Ok(SaddleSolution { b, alpha })
}

/// Row-wise sparse matrix used for constraint blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self {
            ncols: m.ncols(),
            rows,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn push(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `out += Aᵀ y`.
    pub fn tr_mul_acc(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yi) in self.rows.iter().zip(y) {
            if yi != 0.0 {
                for &(j, v) in r {
                    out[j] += v * yi;
                }
            }
        }
    }

    fn row_norm(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// `min ½zᵀHz + gᵀz  s.t.  A z = b_eq,  C z ≥ d`.
#[derive(Clone, Debug)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: SparseRows,
    pub b_eq: Vec<f64>,
    pub c_in: SparseRows,
    pub d_in: Vec<f64>,
}

impl DenseQp {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: SparseRows::new(n),
            b_eq: Vec::new(),
            c_in: SparseRows::new(n),
            d_in: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        0.5 * zv.dot(&(&self.h * &zv)) + self.g.dot(&zv)
    }

    fn validate(&self) -> Result<(), LinalgError> {
        let n = self.n();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(LinalgError::Dimension(format!(
                "H is {}x{}, g has {n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.c_in.nrows() != self.d_in.len() {
            return Err(LinalgError::Dimension("constraint rows vs rhs".into()));
        }
        if (self.a_eq.nrows() > 0 && self.a_eq.ncols != n) || (self.c_in.nrows() > 0 && self.c_in.ncols != n) {
            return Err(LinalgError::Dimension("constraint column count".into()));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.h.amax()) {
            return Err(LinalgError::Dimension(format!("H not symmetric ({asym:e})")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub lambda_eq: Vec<f64>,
    pub lambda_in: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
}

/// KKT residuals `(stationarity, primal infeasibility, complementarity,
/// dual infeasibility)` of a candidate solution.
pub fn kkt_residuals(qp: &DenseQp, sol: &QpSolution) -> (f64, f64, f64, f64) {
    let n = qp.n();
    let z = DVector::from_column_slice(&sol.z);
    let mut grad: Vec<f64> = (&qp.h * &z + &qp.g).iter().copied().collect();
    let mut at = vec![0.0; n];
    qp.a_eq.tr_mul_acc(&sol.lambda_eq, &mut at);
    qp.c_in.tr_mul_acc(&sol.lambda_in, &mut at);
    for (g, a) in grad.iter_mut().zip(&at) {
        *g -= a;
    }
    let stat = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut prim = 0.0_f64;
    for i in 0..qp.a_eq.nrows() {
        prim = prim.max((qp.a_eq.row_dot(i, &sol.z) - qp.b_eq[i]).abs());
    }
    let mut comp = 0.0_f64;
    for i in 0..qp.c_in.nrows() {
        let s = qp.c_in.row_dot(i, &sol.z) - qp.d_in[i];
        prim = prim.max((-s).max(0.0));
        comp = comp.max((sol.lambda_in[i] * s).abs());
    }
    let dual = sol.lambda_in.iter().fold(0.0_f64, |m, &l| m.max(-l));
    (stat, prim, comp, dual)
}

/// Dense convex QP. Positive definite Hessians are solved in one dual
/// active-set pass; merely semidefinite ones through proximal-point
/// iterations on `H + ρI`, each a strictly convex subproblem.
pub fn solve_qp(qp: &DenseQp) -> Result<QpSolution, LinalgError> {
    qp.validate()?;
    let n = qp.n();
    let mut solver = DualActiveSet::default();
    let hrow = row_major(&qp.h);
    let dmax = (0..n).map(|i| qp.h[(i, i)].abs()).fold(0.0, f64::max);
    match Cholesky::factor_slice(n, &hrow) {
        Ok(ch) if ch.min_pivot_sq() > 1e-10 * dmax => {
            Ok(solver.solve(&ch, qp, qp.g.as_slice(), 50 * n.max(1) + qp.a_eq.nrows()))
        }
        _ => solve_semidefinite(&mut solver, qp, &hrow),
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * m.ncols()];
    for i in 0..n {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
    out
}

fn solve_semidefinite(solver: &mut DualActiveSet, qp: &DenseQp, hrow: &[f64]) -> Result<QpSolution, LinalgError> {
    let n = qp.n();
    let scale = qp.h.amax().max(1.0);
    let rho = 1e-3 * scale;
    let mut hr = hrow.to_vec();
    for i in 0..n {
        hr[i * n + i] += rho;
    }
    let ch = Cholesky::factor_slice(n, &hr)?;
    let mut center = vec![0.0; n];
    let mut total_iters = 0;
    let mut last: Option<QpSolution> = None;
    for _ in 0..500 {
        let g: Vec<f64> = qp.g.iter().zip(&center).map(|(g, c)| g - rho * c).collect();
        let mut sol = solver.solve(&ch, qp, &g, 50 * n.max(1) + qp.a_eq.nrows());
        total_iters += sol.iterations;
        if sol.status != QpStatus::Optimal {
            sol.iterations = total_iters;
            return Ok(sol);
        }
        let step = sol
            .z
            .iter()
            .zip(&center)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let zmax = sol.z.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        center.clone_from(&sol.z);
        sol.objective = qp.objective(&sol.z);
        sol.iterations = total_iters;
        let done = step <= 1e-12 * zmax;
        last = Some(sol);
        if done {
            break;
        }
    }
    Ok(last.expect("at least one proximal iteration"))
}

/// Workspace of the dual active-set method; reusable across solves.
#[derive(Default, Debug)]
pub struct DualActiveSet {
    /// `J = L⁻ᵀQ`, column-major n×n.
    j: Vec<f64>,
    /// Upper-triangular `R`, column-major n×n (first `q` columns used).
    r: Vec<f64>,
    d: Vec<f64>,
    step: Vec<f64>,
    rdir: Vec<f64>,
}

/// Constraint reference: equality rows first, then inequality rows.
#[derive(Clone, Copy, Debug, PartialEq)]
struct ActiveRow {
    id: usize,
    is_eq: bool,
    /// −1 when an equality row is used with flipped orientation.
    sign: f64,
}

const VIOLATION_TOL: f64 = 1e-11;
/// Normalised violation below which a row dependent on the active set is
/// treated as satisfied.
const DEPENDENT_TOL: f64 = 1e-8;

impl DualActiveSet {
    fn normal<'a>(qp: &'a DenseQp, row: ActiveRow) -> &'a [(usize, f64)] {
        if row.is_eq {
            &qp.a_eq.rows[row.id]
        } else {
            &qp.c_in.rows[row.id]
        }
    }

    fn slack(qp: &DenseQp, row: ActiveRow, z: &[f64]) -> f64 {
        if row.is_eq {
            row.sign * (qp.a_eq.row_dot(row.id, z) - qp.b_eq[row.id])
        } else {
            qp.c_in.row_dot(row.id, z) - qp.d_in[row.id]
        }
    }

    /// `d = Jᵀ n` for a sparse normal `n` (scaled by `sign`).
    fn compute_d(&mut self, n: usize, normal: &[(usize, f64)], sign: f64) {
        self.d.clear();
        self.d.resize(n, 0.0);
        for i in 0..n {
            let col = &self.j[i * n..(i + 1) * n];
            let mut s = 0.0;
            for &(c, v) in normal {
                s += col[c] * v;
            }
            self.d[i] = sign * s;
        }
    }

    /// Primal step `J₂d₂` and dual step `R⁻¹d₁`.
    fn directions(&mut self, n: usize, q: usize) {
        self.step.clear();
        self.step.resize(n, 0.0);
        for i in q..n {
            let di = self.d[i];
            if di != 0.0 {
                let col = &self.j[i * n..(i + 1) * n];
                for (s, &c) in self.step.iter_mut().zip(col) {
                    *s += c * di;
                }
            }
        }
        self.rdir.clear();
        self.rdir.resize(q, 0.0);
        for i in (0..q).rev() {
            let mut s = self.d[i];
            for k in i + 1..q {
                s -= self.r[k * n + i] * self.rdir[k];
            }
            self.rdir[i] = s / self.r[i * n + i];
        }
    }

    fn rotate_j_cols(&mut self, n: usize, a: usize, b: usize, c: f64, s: f64) {
        let (lo, hi) = self.j.split_at_mut(b * n);
        let ca = &mut lo[a * n..(a + 1) * n];
        let cb = &mut hi[..n];
        for (x, y) in ca.iter_mut().zip(cb.iter_mut()) {
            let (xa, yb) = (*x, *y);
            *x = c * xa + s * yb;
            *y = -s * xa + c * yb;
        }
    }

    /// Append the constraint whose `d = Jᵀn` is in `self.d`.
    fn add(&mut self, n: usize, q: usize) {
        for jj in (q + 1..n).rev() {
            let (a, b) = (self.d[jj - 1], self.d[jj]);
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (c, s) = (a / rho, b / rho);
            self.d[jj - 1] = rho;
            self.d[jj] = 0.0;
            self.rotate_j_cols(n, jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[q * n + i] = self.d[i];
        }
    }

    /// Remove active position `k` out of `q`.
    fn drop(&mut self, n: usize, q: usize, k: usize) {
        // shift columns of R left
        for col in k..q - 1 {
            for i in 0..=col + 1 {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(q - 1) * n + i] = 0.0;
        }
        // restore triangularity
        for jj in k..q - 1 {
            let (a, b) = (self.r[jj * n + jj], self.r[jj * n + jj + 1]);
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (c, s) = (a / rho, b / rho);
            for col in jj..q - 1 {
                let (x, y) = (self.r[col * n + jj], self.r[col * n + jj + 1]);
                self.r[col * n + jj] = c * x + s * y;
                self.r[col * n + jj + 1] = -s * x + c * y;
            }
            self.rotate_j_cols(n, jj, jj + 1, c, s);
        }
    }

    /// Run the dual method with fixed Hessian factor `ch` and linear term `g`.
    pub fn solve(&mut self, ch: &Cholesky, qp: &DenseQp, g: &[f64], max_iter: usize) -> QpSolution {
        let n = ch.dim();
        let meq = qp.a_eq.nrows();
        let min = qp.c_in.nrows();

        // J = L⁻ᵀ: column i solves Lᵀ x = e_i
        self.j.clear();
        self.j.resize(n * n, 0.0);
        for i in 0..n {
            let col = &mut self.j[i * n..(i + 1) * n];
            col[i] = 1.0;
            for m in (0..=i).rev() {
                let xm = col[m] / ch.l(m, m);
                col[m] = xm;
                if xm != 0.0 {
                    let lrow = ch.row(m);
                    for (c, l) in col[..m].iter_mut().zip(lrow) {
                        *c -= l * xm;
                    }
                }
            }
        }
        self.r.clear();
        self.r.resize(n * n, 0.0);

        // unconstrained minimiser
        let mut z = g.iter().map(|v| -v).collect::<Vec<f64>>();
        ch.solve_in_place(&mut z);

        let mut active: Vec<ActiveRow> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = 0;
        let mut status = QpStatus::Optimal;
        let mut skipped_eq = vec![false; meq];

        // equality constraints: always full steps
        for e in 0..meq {
            let mut row = ActiveRow {
                id: e,
                is_eq: true,
                sign: 1.0,
            };
            let s = Self::slack(qp, row, &z);
            if s > 0.0 {
                row.sign = -1.0;
            }
            let s = Self::slack(qp, row, &z);
            let q = active.len();
            self.compute_d(n, Self::normal(qp, row), row.sign);
            self.directions(n, q);
            let d2: f64 = self.d[q..].iter().map(|v| v * v).sum();
            let dn: f64 = self.d.iter().map(|v| v * v).sum();
            if d2 <= 1e-14 * dn.max(1e-300) {
                // dependent on rows already active
                if s.abs() <= 1e-9 * (1.0 + qp.b_eq[e].abs()) {
                    skipped_eq[e] = true;
                    continue;
                }
                status = QpStatus::Infeasible;
                break;
            }
            let t = -s / d2;
            for (zi, si) in z.iter_mut().zip(&self.step) {
                *zi += t * si;
            }
            for (uk, rk) in u.iter_mut().zip(&self.rdir) {
                *uk -= t * rk;
            }
            self.add(n, q);
            active.push(row);
            u.push(t);
            iterations += 1;
        }

        let norms: Vec<f64> = (0..min).map(|i| qp.c_in.row_norm(i).max(1e-300)).collect();
        let mut is_active = vec![false; min];
        let mut skipped_in = vec![false; min];

        'outer: while status == QpStatus::Optimal {
            // most violated inequality, lowest index on ties
            let mut p = None;
            let mut worst = -VIOLATION_TOL;
            for i in 0..min {
                if is_active[i] || skipped_in[i] {
                    continue;
                }
                let s = (qp.c_in.row_dot(i, &z) - qp.d_in[i]) / norms[i];
                if s < worst {
                    worst = s;
                    p = Some(i);
                }
            }
            let Some(p) = p else { break };
            let row = ActiveRow {
                id: p,
                is_eq: false,
                sign: 1.0,
            };
            let mut up = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    status = QpStatus::MaxIter;
                    break 'outer;
                }
                let q = active.len();
                self.compute_d(n, Self::normal(qp, row), 1.0);
                self.directions(n, q);
                let d2: f64 = self.d[q..].iter().map(|v| v * v).sum();
                let dn: f64 = self.d.iter().map(|v| v * v).sum();

                let mut t1 = f64::INFINITY;
                let mut kdrop = usize::MAX;
                for k in 0..q {
                    if !active[k].is_eq && self.rdir[k] > 0.0 {
                        let ratio = u[k] / self.rdir[k];
                        if ratio < t1 {
                            t1 = ratio;
                            kdrop = k;
                        }
                    }
                }
                let s = Self::slack(qp, row, &z);
                let t2 = if d2 <= 1e-14 * dn.max(1e-300) {
                    f64::INFINITY
                } else {
                    (-s / d2).max(0.0)
                };
                let t = t1.min(t2);
                if t.is_infinite() {
                    if s >= -DEPENDENT_TOL * norms[p] {
                        // n_p = Σ rdir_k n_k on the active set
                        for (uk, rk) in u.iter_mut().zip(&self.rdir) {
                            *uk += up * rk;
                        }
                        skipped_in[p] = true;
                        continue 'outer;
                    }
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                if t2.is_infinite() {
                    for (uk, rk) in u.iter_mut().zip(&self.rdir) {
                        *uk -= t * rk;
                    }
                    up += t;
                    self.drop(n, q, kdrop);
                    is_active[active[kdrop].id] = false;
                    active.remove(kdrop);
                    u.remove(kdrop);
                    continue;
                }
                for (zi, si) in z.iter_mut().zip(&self.step) {
                    *zi += t * si;
                }
                for (uk, rk) in u.iter_mut().zip(&self.rdir) {
                    *uk -= t * rk;
                }
                up += t;
                if t2 <= t1 {
                    self.add(n, q);
                    active.push(row);
                    u.push(up);
                    is_active[p] = true;
                    continue 'outer;
                }
                self.drop(n, q, kdrop);
                is_active[active[kdrop].id] = false;
                active.remove(kdrop);
                u.remove(kdrop);
            }
        }

        let mut lambda_eq = vec![0.0; meq];
        let mut lambda_in = vec![0.0; min];
        for (row, &uk) in active.iter().zip(&u) {
            if row.is_eq {
                lambda_eq[row.id] = row.sign * uk;
            } else {
                lambda_in[row.id] = uk.max(0.0);
            }
        }
        let objective = qp.objective(&z);
        QpSolution {
            z,
            lambda_eq,
            lambda_in,
            status,
            iterations,
            objective,
        }
    }
}
