//! Dense line-search SQP on the ℓ1 merit function.
//!
//! Each major iteration solves the QP
//!
//! ```text
//! min ½dᵀBd + ∇fᵀd   s.t.  c_eq + J_eq d = 0,   c_in + J_in d ≥ 0
//! ```
//!
//! where `B` is the Lagrangian Hessian with every reported block projected onto
//! the PSD cone, plus Levenberg damping. An optional callback runs after each
//! accepted step and may overwrite the parameter vector; `z` is never touched
//! by it.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg::{solve_qp, DenseQp, QpSolution, QpStatus, SparseRows};
use crate::transcription::{HessianBlock, Nlp, NlpEval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqpSettings {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_major_iters: usize,
    pub backtrack: f64,
    pub armijo: f64,
    /// Initial Levenberg damping; doubled after every backtracked step.
    pub levenberg: f64,
    pub levenberg_max: f64,
    /// Lower bound on the Hessian spectrum.
    pub hessian_floor: f64,
    /// Added to `‖λ‖∞` when raising the merit penalty.
    pub penalty_margin: f64,
    pub min_step: f64,
    /// Consecutive relaxed iterations without progress in violation before
    /// the solve stops as locally infeasible.
    pub infeasible_window: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            feas_tol: 1e-6,
            max_major_iters: 200,
            backtrack: 0.5,
            armijo: 1e-4,
            levenberg: 1e-6,
            levenberg_max: 1e3,
            hessian_floor: 1e-8,
            penalty_margin: 1.0,
            min_step: 1e-12,
            infeasible_window: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqpStatus {
    Converged,
    MaxIter,
    LineSearchStall,
    QpFailure,
    LocallyInfeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub violation: f64,
    pub step_norm: f64,
    pub kkt: f64,
    pub merit: f64,
    pub step_length: f64,
    pub params_changed: bool,
    /// Seconds since the start of the solve.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterations: Vec<IterationRecord>,
    pub status: SqpStatus,
}

impl SolveTrace {
    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }
}

#[derive(Clone, Debug)]
pub struct SqpResult {
    pub z: Vec<f64>,
    pub params: Vec<f64>,
    pub lambda_eq: Vec<f64>,
    pub lambda_in: Vec<f64>,
    pub trace: SolveTrace,
}

impl SqpResult {
    pub fn converged(&self) -> bool {
        self.trace.status == SqpStatus::Converged
    }
}

/// Hook run after each accepted step; returns whether `params` changed.
pub type IterationCallback<'a> = dyn FnMut(&[f64], &mut Vec<f64>) -> bool + 'a;

/// `Σ|c_eq| + Σ max(0, −c_in)`.
pub fn l1_violation(c_eq: &[f64], c_in: &[f64]) -> f64 {
    c_eq.iter().map(|c| c.abs()).sum::<f64>() + c_in.iter().map(|c| (-c).max(0.0)).sum::<f64>()
}

pub fn max_violation(c_eq: &[f64], c_in: &[f64]) -> f64 {
    c_eq.iter()
        .map(|c| c.abs())
        .chain(c_in.iter().map(|c| (-c).max(0.0)))
        .fold(0.0, f64::max)
}

/// Outcome of the backtracking search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    pub step: f64,
    pub merit: f64,
    pub accepted: bool,
}

/// Backtracking Armijo search on `φ = f + ρ·‖violation‖₁` along `d` from `z`.
/// `merit0` is `φ(z)` and `slope` its directional derivative along `d`.
#[allow(clippy::too_many_arguments)]
pub fn merit_and_step(
    nlp: &dyn Nlp,
    z: &[f64],
    params: &[f64],
    d: &[f64],
    penalty: f64,
    merit0: f64,
    slope: f64,
    settings: &SqpSettings,
) -> LineSearch {
    let mut a = 1.0;
    let mut trial = vec![0.0; z.len()];
    while a >= settings.min_step {
        for ((t, zi), di) in trial.iter_mut().zip(z).zip(d) {
            *t = zi + a * di;
        }
        let (f, ce, ci) = nlp.values(&trial, params);
        let phi = f + penalty * l1_violation(&ce, &ci);
        if phi.is_finite() && phi <= merit0 + settings.armijo * a * slope.min(0.0) {
            return LineSearch {
                step: a,
                merit: phi,
                accepted: true,
            };
        }
        a *= settings.backtrack;
    }
    LineSearch {
        step: a,
        merit: merit0,
        accepted: false,
    }
}

/// Diagonal shift relative to the largest Hessian diagonal.
const RELATIVE_SHIFT: f64 = 1e-8;

fn project_block(b: &HessianBlock) -> DMatrix<f64> {
    let k = b.vars.len();
    let m = DMatrix::from_row_slice(k, k, &b.h);
    let m = (&m + m.transpose()) * 0.5;
    if m.iter().all(|v| *v == 0.0) {
        return m;
    }
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn assemble_hessian(n: usize, blocks: &[HessianBlock], shift: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    for b in blocks {
        let p = project_block(b);
        for (a, &ia) in b.vars.iter().enumerate() {
            for (c, &ic) in b.vars.iter().enumerate() {
                h[(ia, ic)] += p[(a, c)];
            }
        }
    }
    // relative part keeps min pivot / max diagonal well above rounding
    let scale = (0..n).fold(0.0_f64, |a, i| a.max(h[(i, i)]));
    let shift = shift + RELATIVE_SHIFT * scale;
    for i in 0..n {
        h[(i, i)] += shift;
    }
    h
}

fn subproblem(ev: &NlpEval, h: DMatrix<f64>) -> DenseQp {
    let mut qp = DenseQp::unconstrained(h, DVector::from_column_slice(&ev.grad));
    qp.a_eq = ev.j_eq.clone();
    qp.b_eq = ev.c_eq.iter().map(|c| -c).collect();
    qp.c_in = ev.j_in.clone();
    qp.d_in = ev.c_in.iter().map(|c| -c).collect();
    qp
}

/// Relaxed subproblem in `(d, t)`: the linearisation is required only up to
/// a fraction `t ∈ [0, 1]` of the current violation, with `t` charged at
/// `weight`. Feasible at `(0, 1)`.
fn relaxed_subproblem(ev: &NlpEval, h: &DMatrix<f64>, weight: f64) -> DenseQp {
    let n = h.nrows();
    let nt = n + 1;
    let diag = (0..n).fold(1.0_f64, |a, i| a.max(h[(i, i)].abs()));
    let mut hh = DMatrix::zeros(nt, nt);
    hh.view_mut((0, 0), (n, n)).copy_from(h);
    hh[(n, n)] = 1e-4 * diag;
    let mut g = DVector::from_element(nt, weight);
    g.rows_mut(0, n).copy_from_slice(&ev.grad);
    let mut qp = DenseQp::unconstrained(hh, g);
    let widen = |rows: &SparseRows| {
        let mut out = SparseRows::new(nt);
        for r in &rows.rows {
            out.push(r.clone());
        }
        out
    };
    qp.a_eq = widen(&ev.j_eq);
    qp.c_in = widen(&ev.j_in);
    // J d − t c = −c for equalities
    for (row, &c) in qp.a_eq.rows.iter_mut().zip(&ev.c_eq) {
        if c != 0.0 {
            row.push((n, -c));
        }
    }
    // J d + t max(−c, 0) ≥ −c for inequalities
    for (row, &c) in qp.c_in.rows.iter_mut().zip(&ev.c_in) {
        if c < 0.0 {
            row.push((n, -c));
        }
    }
    qp.b_eq = ev.c_eq.iter().map(|c| -c).collect();
    qp.d_in = ev.c_in.iter().map(|c| -c).collect();
    qp.c_in.push(vec![(n, 1.0)]);
    qp.d_in.push(0.0);
    qp.c_in.push(vec![(n, -1.0)]);
    qp.d_in.push(-1.0);
    qp
}

/// KKT measure at `z` with multipliers from the subproblem solved there:
/// scaled stationarity and complementarity.
fn kkt_measure(ev: &NlpEval, sol: &QpSolution) -> f64 {
    let n = ev.grad.len();
    let mut r = ev.grad.clone();
    let mut jt = vec![0.0; n];
    ev.j_eq.tr_mul_acc(&sol.lambda_eq, &mut jt);
    ev.j_in.tr_mul_acc(&sol.lambda_in, &mut jt);
    for (a, b) in r.iter_mut().zip(&jt) {
        *a -= b;
    }
    let m = (sol.lambda_eq.len() + sol.lambda_in.len()).max(1) as f64;
    let l1: f64 = sol.lambda_eq.iter().chain(&sol.lambda_in).map(|l| l.abs()).sum();
    let scale = (l1 / m).max(100.0) / 100.0;
    let stat = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let comp = sol
        .lambda_in
        .iter()
        .zip(&ev.c_in)
        .fold(0.0_f64, |a, (l, c)| a.max((l * c).abs()));
    stat.max(comp) / scale
}

/// Solve `nlp` from `z0` with parameters `params0`.
pub fn solve(
    nlp: &dyn Nlp,
    z0: &[f64],
    params0: &[f64],
    settings: &SqpSettings,
    mut callback: Option<&mut IterationCallback<'_>>,
) -> SqpResult {
    let clock = Instant::now();
    let n = nlp.n_vars();
    assert_eq!(z0.len(), n, "initial point dimension");
    let mut z = z0.to_vec();
    let mut params = params0.to_vec();
    let mut lam_eq = vec![0.0; nlp.n_eq()];
    let mut lam_in = vec![0.0; nlp.n_in()];
    let mut penalty = 1.0_f64;
    let mut lev = settings.levenberg;
    let required_streak = if callback.is_some() { 2 } else { 1 };
    let mut streak = 0;
    let mut records = Vec::new();
    let mut status = SqpStatus::MaxIter;
    let mut best_viol = f64::INFINITY;
    let mut stuck = 0;

    for _ in 0..settings.max_major_iters {
        let ev = nlp.evaluate(&z, &params, &lam_eq, &lam_in);
        let viol = max_violation(&ev.c_eq, &ev.c_in);
        let h = assemble_hessian(n, &ev.hessian, settings.hessian_floor + lev);
        let mut sol = match solve_qp(&subproblem(&ev, h.clone())) {
            Ok(s) => s,
            Err(_) => {
                status = SqpStatus::QpFailure;
                break;
            }
        };
        // fraction of the violation left by the linearised step
        let mut relax = 0.0;
        if sol.status != QpStatus::Optimal {
            let weight = 10.0 * penalty.max(10.0);
            match solve_qp(&relaxed_subproblem(&ev, &h, weight)) {
                Ok(mut s) if s.status == QpStatus::Optimal => {
                    relax = s.z[n].clamp(0.0, 1.0);
                    s.z.truncate(n);
                    s.lambda_in.truncate(ev.c_in.len());
                    sol = s;
                }
                _ => {
                    status = SqpStatus::QpFailure;
                    break;
                }
            }
        }
        if relax > 0.0 && viol > best_viol * (1.0 - 1e-3) {
            stuck += 1;
        } else {
            stuck = 0;
        }
        best_viol = best_viol.min(viol);
        if stuck >= settings.infeasible_window {
            status = SqpStatus::LocallyInfeasible;
            break;
        }
        let d = std::mem::take(&mut sol.z);
        let kkt = kkt_measure(&ev, &sol);
        let lmax = sol
            .lambda_eq
            .iter()
            .chain(&sol.lambda_in)
            .fold(0.0_f64, |a, l| a.max(l.abs()));
        let satisfied = kkt <= settings.kkt_tol && viol <= settings.feas_tol;
        streak = if satisfied { streak + 1 } else { 0 };
        if streak >= required_streak {
            // polish with the final step if it does not hurt feasibility
            let trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            let (_, ce, ci) = nlp.values(&trial, &params);
            if max_violation(&ce, &ci) <= viol.max(settings.feas_tol * 1e-2) {
                z = trial;
            }
            lam_eq = sol.lambda_eq;
            lam_in = sol.lambda_in;
            records.push(IterationRecord {
                objective: ev.f,
                violation: viol,
                step_norm: d.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
                kkt,
                merit: ev.f + penalty * l1_violation(&ev.c_eq, &ev.c_in),
                step_length: 1.0,
                params_changed: false,
                wall_time: clock.elapsed().as_secs_f64(),
            });
            status = SqpStatus::Converged;
            break;
        }

        let v1 = l1_violation(&ev.c_eq, &ev.c_in);
        let gd: f64 = ev.grad.iter().zip(&d).map(|(g, di)| g * di).sum();
        let reduced = (1.0 - relax) * v1;
        if relax == 0.0 {
            if penalty < lmax + settings.penalty_margin {
                penalty = lmax + settings.penalty_margin;
            }
        } else if reduced > 0.0 {
            let dhd = (&h * DVector::from_column_slice(&d)).dot(&DVector::from_column_slice(&d));
            let need = (gd + 0.5 * dhd.max(0.0)) / (0.9 * reduced);
            if penalty < need {
                penalty = need + settings.penalty_margin;
            }
        }
        let merit0 = ev.f + penalty * v1;
        let slope = gd - penalty * reduced;
        let ls = merit_and_step(nlp, &z, &params, &d, penalty, merit0, slope, settings);
        if !ls.accepted {
            if lev < settings.levenberg_max {
                // retry with a stronger damping before declaring a stall
                lev = (lev * 1e3).min(settings.levenberg_max);
                streak = 0;
                continue;
            }
            status = SqpStatus::LineSearchStall;
            records.push(IterationRecord {
                objective: ev.f,
                violation: viol,
                step_norm: 0.0,
                kkt,
                merit: merit0,
                step_length: 0.0,
                params_changed: false,
                wall_time: clock.elapsed().as_secs_f64(),
            });
            break;
        }
        lev = if ls.step < 1.0 {
            (lev * 2.0).min(settings.levenberg_max)
        } else {
            (lev * 0.5).max(settings.levenberg)
        };
        for (zi, di) in z.iter_mut().zip(&d) {
            *zi += ls.step * di;
        }
        lam_eq = sol.lambda_eq;
        lam_in = sol.lambda_in;
        let changed = match callback.as_mut() {
            Some(cb) => cb(&z, &mut params),
            None => false,
        };
        if changed {
            streak = 0;
            stuck = 0;
            best_viol = f64::INFINITY;
        }
        records.push(IterationRecord {
            objective: ev.f,
            violation: viol,
            step_norm: ls.step * d.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
            kkt,
            merit: ls.merit,
            step_length: ls.step,
            params_changed: changed,
            wall_time: clock.elapsed().as_secs_f64(),
        });
    }
    SqpResult {
        z,
        params,
        lambda_eq: lam_eq,
        lambda_in: lam_in,
        trace: SolveTrace {
            iterations: records,
            status,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kkt_residuals, SparseRows};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Convex QP wrapped as an NLP.
    struct QpNlp(DenseQp);

    impl Nlp for QpNlp {
        fn n_vars(&self) -> usize {
            self.0.n()
        }
        fn n_eq(&self) -> usize {
            self.0.b_eq.len()
        }
        fn n_in(&self) -> usize {
            self.0.d_in.len()
        }
        fn values(&self, z: &[f64], _: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
            let q = &self.0;
            let ce = q.a_eq.mul_vec(z).iter().zip(&q.b_eq).map(|(a, b)| a - b).collect();
            let ci = q.c_in.mul_vec(z).iter().zip(&q.d_in).map(|(a, b)| a - b).collect();
            (q.objective(z), ce, ci)
        }
        fn evaluate(&self, z: &[f64], p: &[f64], _: &[f64], _: &[f64]) -> NlpEval {
            let (f, c_eq, c_in) = self.values(z, p);
            let q = &self.0;
            let grad = (&q.h * DVector::from_column_slice(z) + &q.g).iter().copied().collect();
            let n = q.n();
            NlpEval {
                f,
                grad,
                c_eq,
                c_in,
                j_eq: q.a_eq.clone(),
                j_in: q.c_in.clone(),
                hessian: vec![HessianBlock {
                    vars: (0..n).collect(),
                    h: q.h.transpose().iter().copied().collect(),
                }],
            }
        }
    }

    /// Rosenbrock with `x ≤ 0.8`; optimum `(0.8, 0.64)`.
    struct Rosenbrock;

    impl Nlp for Rosenbrock {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            0
        }
        fn n_in(&self) -> usize {
            1
        }
        fn values(&self, z: &[f64], _: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
            let (x, y) = (z[0], z[1]);
            ((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2), vec![], vec![0.8 - x])
        }
        fn evaluate(&self, z: &[f64], p: &[f64], _: &[f64], _: &[f64]) -> NlpEval {
            let (f, c_eq, c_in) = self.values(z, p);
            let (x, y) = (z[0], z[1]);
            let grad = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
            let hxx = 2.0 - 400.0 * (y - x * x) + 800.0 * x * x;
            let hxy = -400.0 * x;
            let mut j_in = SparseRows::new(2);
            j_in.push(vec![(0, -1.0)]);
            NlpEval {
                f,
                grad,
                c_eq,
                c_in,
                j_eq: SparseRows::new(2),
                j_in,
                hessian: vec![HessianBlock {
                    vars: vec![0, 1],
                    h: vec![hxx, hxy, hxy, 200.0],
                }],
            }
        }
    }

    fn random_qp(rng: &mut ChaCha8Rng) -> DenseQp {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.2;
        let mut qp = DenseQp::unconstrained(h, DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
        qp.a_eq = SparseRows::from_dense(&DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)));
        qp.b_eq = vec![0.3, -0.2];
        qp.c_in = SparseRows::from_dense(&DMatrix::from_fn(8, n, |_, _| rng.gen_range(-1.0..1.0)));
        qp.d_in = (0..8).map(|_| rng.gen_range(-1.0..0.0)).collect();
        qp
    }

    #[test]
    fn qp_as_nlp_matches_qp_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let qp = random_qp(&mut rng);
            let direct = solve_qp(&qp).unwrap();
            let (_, pr, _, _) = kkt_residuals(&qp, &direct);
            assert!(pr < 1e-9);
            let z0 = vec![0.0; qp.n()];
            let r = solve(&QpNlp(qp), &z0, &[], &SqpSettings::default(), None);
            assert!(r.converged());
            for (a, b) in r.z.iter().zip(&direct.z) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rosenbrock_smoke() {
        let r = solve(&Rosenbrock, &[-1.2, 1.0], &[], &SqpSettings::default(), None);
        assert!(r.converged(), "{:?}", r.trace.status);
        assert!(r.trace.n_iterations() < 100);
        assert!((r.z[0] - 0.8).abs() < 1e-6 && (r.z[1] - 0.64).abs() < 1e-6, "{:?}", r.z);
    }

    #[test]
    fn merit_search_examples() {
        let qp = DenseQp::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]));
        let nlp = QpNlp(qp);
        let s = SqpSettings::default();
        // exact Newton step on a quadratic: full step
        let ls = merit_and_step(&nlp, &[0.0, 0.0], &[], &[1.0, 1.0], 1.0, 0.0, -2.0, &s);
        assert!(ls.accepted && ls.step == 1.0);
        // ascent direction: no acceptable step
        let ls = merit_and_step(&nlp, &[0.0, 0.0], &[], &[-1.0, -1.0], 1.0, 0.0, -2.0, &s);
        assert!(!ls.accepted && ls.step < 1e-12);
    }

    #[test]
    fn merit_monotone_and_deterministic() {
        let r1 = solve(&Rosenbrock, &[-1.2, 1.0], &[], &SqpSettings::default(), None);
        let r2 = solve(&Rosenbrock, &[-1.2, 1.0], &[], &SqpSettings::default(), None);
        assert_eq!(r1.z, r2.z);
        let strip = |t: &SolveTrace| t.iterations.iter().map(|i| (i.objective, i.merit, i.step_norm)).collect::<Vec<_>>();
        assert_eq!(strip(&r1.trace), strip(&r2.trace));
        let its = &r1.trace.iterations;
        for w in its.windows(2) {
            assert!(w[1].wall_time >= w[0].wall_time);
        }
        assert!(r1.lambda_in.iter().all(|&l| l >= -1e-8));
    }
}
