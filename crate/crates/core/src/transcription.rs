//! Multiple-shooting transcription of the time-optimal planning problem with
//! Bernstein collision constraints.
//!
//! Decision vector layout:
//!
//! ```text
//! [ T | x_0 … x_N (3 each) | u_0 … u_{N-1} (2 each) | (w₁, w₂, b) per knot per obstacle ]
//! ```
//!
//! The trailing hyperplane block exists only in the coupled variant; the
//! decoupled variant receives the same numbers as a frozen parameter vector.
//!
//! On interval `k` the position is the cubic dense output of RK4 and the
//! hyperplane of obstacle `o` is the linear spline between its knot values,
//! so `g(τ) = w(τ)ᵀp(τ) + b(τ) − ε − r` is a quartic whose five Bernstein
//! coefficients are constrained to be nonnegative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{Jet, Scalar};
use crate::bernstein::{product, BernsteinPoly, ProductMode};
use crate::dynamics::{dense_coeffs, dense_output, rk4, ControlInput, IntervalPolynomial, RobotState};
use crate::geometry::{point_polytope_distance, ConvexPolytope, Vec2};
use crate::linalg::SparseRows;
use crate::svm::Hyperplane;

/// Workspace dimension of the separating hyperplanes.
pub const NY: usize = 2;
/// Degree of the collision polynomial `g` (linear hyperplane × cubic position).
pub const COLLISION_DEGREE: usize = 4;
pub const COLLISION_COEFFS: usize = COLLISION_DEGREE + 1;
/// Amount by which collision, vertex and norm rows are tightened in the
/// solver-facing NLP, so solutions within solver tolerance still certify.
pub const CONSTRAINT_TIGHTENING: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptionError {
    #[error("rejected problem: {0}")]
    Rejected(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Decoupled,
    Coupled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Decoupled => "decoupled",
            Variant::Coupled => "coupled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageCost {
    /// `ℓ = ‖u‖²`, integrated by the midpoint rule (exact for piecewise-constant controls).
    ControlEffort,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub start: RobotState,
    pub goal: RobotState,
    /// Lower/upper bounds on `(x, y, θ)`; infinite entries are omitted.
    pub state_lower: [f64; 3],
    pub state_upper: [f64; 3],
    /// Lower/upper bounds on `(v, ω)`.
    pub control_lower: [f64; 2],
    pub control_upper: [f64; 2],
    pub obstacles: Vec<ConvexPolytope>,
    pub robot_radius: f64,
    pub eps: f64,
    pub n_intervals: usize,
    pub alpha: f64,
    pub stage_cost: StageCost,
    pub t_bounds: (f64, f64),
}

pub const DEFAULT_V_MAX: f64 = 1.0;
pub const DEFAULT_OMEGA_MAX: f64 = 1.5;
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.15;
pub const DEFAULT_EPS: f64 = 0.05;
pub const DEFAULT_N: usize = 20;
pub const DEFAULT_ALPHA: f64 = 1e-3;

impl PlanningProblem {
    /// Problem in the `[0, 10]²` arena with default robot and control limits.
    pub fn in_arena(start: RobotState, goal: RobotState, obstacles: Vec<ConvexPolytope>) -> Self {
        Self {
            start,
            goal,
            state_lower: [0.0, 0.0, f64::NEG_INFINITY],
            state_upper: [10.0, 10.0, f64::INFINITY],
            control_lower: [0.0, -DEFAULT_OMEGA_MAX],
            control_upper: [DEFAULT_V_MAX, DEFAULT_OMEGA_MAX],
            obstacles,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            eps: DEFAULT_EPS,
            n_intervals: DEFAULT_N,
            alpha: DEFAULT_ALPHA,
            stage_cost: StageCost::ControlEffort,
            t_bounds: (0.1, 100.0),
        }
    }

    pub fn v_max(&self) -> f64 {
        self.control_upper[0]
    }

    /// Required clearance `r + ε` between robot centre and obstacle.
    pub fn safety_radius(&self) -> f64 {
        self.robot_radius + self.eps
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        let rej = |m: String| Err(TranscriptionError::Rejected(m));
        if self.n_intervals < 2 {
            return rej(format!("need at least 2 intervals, got {}", self.n_intervals));
        }
        if !(self.eps >= 0.0) || !(self.robot_radius >= 0.0) {
            return rej("negative margin or radius".into());
        }
        if !(self.alpha >= 0.0) {
            return rej("negative objective weight".into());
        }
        for i in 0..3 {
            if !(self.state_lower[i] <= self.state_upper[i]) {
                return rej(format!("state bound {i} inconsistent"));
            }
        }
        for i in 0..2 {
            if !(self.control_lower[i] <= self.control_upper[i]) {
                return rej(format!("control bound {i} inconsistent"));
            }
        }
        if !(0.0 < self.t_bounds.0 && self.t_bounds.0 <= self.t_bounds.1) {
            return rej("time bounds inconsistent".into());
        }
        for (name, s) in [("start", self.start), ("goal", self.goal)] {
            let a = s.to_array();
            if a.iter().any(|v| !v.is_finite()) {
                return rej(format!("{name} state not finite"));
            }
            for i in 0..3 {
                if a[i] < self.state_lower[i] || a[i] > self.state_upper[i] {
                    return rej(format!("{name} state outside bounds"));
                }
            }
            let p = Vec2::new(s.x, s.y);
            for (o, obs) in self.obstacles.iter().enumerate() {
                let d = point_polytope_distance(p, obs);
                if d < self.safety_radius() {
                    return rej(format!("{name} in collision with obstacle {o} (distance {d:.4})"));
                }
            }
        }
        Ok(())
    }
}

/// Role of one constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    Start { component: usize },
    Shooting { interval: usize, component: usize },
    Goal { component: usize },
    Collision { interval: usize, obstacle: usize, coeff: usize },
    Vertex { knot: usize, obstacle: usize, vertex: usize },
    Norm { knot: usize, obstacle: usize },
    TimeLower,
    TimeUpper,
    StateBound { knot: usize, component: usize, upper: bool },
    ControlBound { interval: usize, component: usize, upper: bool },
}

/// Index map of the decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_intervals: usize,
    pub n_obstacles: usize,
    pub variant: Variant,
}

impl Layout {
    pub fn t(&self) -> usize {
        0
    }
    pub fn x(&self, k: usize) -> usize {
        1 + 3 * k
    }
    pub fn u(&self, k: usize) -> usize {
        1 + 3 * (self.n_intervals + 1) + 2 * k
    }
    fn plane_base(&self) -> usize {
        1 + 3 * (self.n_intervals + 1) + 2 * self.n_intervals
    }
    /// First of the three `(w₁, w₂, b)` slots, coupled variant only.
    pub fn plane(&self, k: usize, o: usize) -> Option<usize> {
        (self.variant == Variant::Coupled).then(|| self.plane_base() + 3 * (k * self.n_obstacles + o))
    }
    pub fn n_knots(&self) -> usize {
        self.n_intervals + 1
    }
    pub fn n_vars(&self) -> usize {
        match self.variant {
            Variant::Decoupled => self.plane_base(),
            Variant::Coupled => self.plane_base() + 3 * self.n_knots() * self.n_obstacles,
        }
    }
    /// Length of the frozen-hyperplane parameter vector.
    pub fn n_params(&self) -> usize {
        3 * self.n_knots() * self.n_obstacles
    }
}

/// One hyperplane per obstacle per knot; interval splines interpolate
/// linearly between consecutive knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneSchedule {
    /// `planes[k][o]`.
    pub planes: Vec<Vec<Hyperplane>>,
}

impl HyperplaneSchedule {
    pub fn uniform(n_knots: usize, planes: Vec<Hyperplane>) -> Self {
        Self {
            planes: vec![planes; n_knots],
        }
    }

    pub fn n_knots(&self) -> usize {
        self.planes.len()
    }

    pub fn n_obstacles(&self) -> usize {
        self.planes.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: usize, o: usize) -> Hyperplane {
        self.planes[k][o]
    }

    pub fn set(&mut self, k: usize, o: usize, h: Hyperplane) {
        self.planes[k][o] = h;
    }

    /// Degree-1 Bernstein spline of `(w₁, w₂, b)` on interval `k`; the
    /// coefficients are the knot values.
    pub fn interval_spline(&self, k: usize, o: usize) -> BernsteinPoly<f64> {
        let (a, b) = (self.planes[k][o], self.planes[k + 1][o]);
        BernsteinPoly::from_flat(1, 3, vec![a.w.x, a.w.y, a.b, b.w.x, b.w.y, b.b]).expect("finite hyperplanes")
    }

    /// Monomial form `β₀ + β₁τ` of the interval spline:
    /// `β₀ = value at t_k`, `β₁ = value at t_{k+1} − value at t_k`.
    pub fn interval_monomial(&self, k: usize, o: usize) -> ([f64; 3], [f64; 3]) {
        let (a, b) = (self.planes[k][o], self.planes[k + 1][o]);
        ([a.w.x, a.w.y, a.b], [b.w.x - a.w.x, b.w.y - a.w.y, b.b - a.b])
    }

    pub fn from_params(params: &[f64], n_knots: usize, n_obstacles: usize) -> Result<Self, TranscriptionError> {
        let expected = 3 * n_knots * n_obstacles;
        if params.len() != expected {
            return Err(TranscriptionError::Dimension {
                expected,
                got: params.len(),
            });
        }
        let planes = (0..n_knots)
            .map(|k| {
                (0..n_obstacles)
                    .map(|o| {
                        let i = 3 * (k * n_obstacles + o);
                        Hyperplane::new(Vec2::new(params[i], params[i + 1]), params[i + 2])
                    })
                    .collect()
            })
            .collect();
        Ok(Self { planes })
    }
}

/// Pack knot hyperplanes as `(w₁, w₂, b)` per knot per obstacle.
pub fn freeze_hyperplanes(schedule: &HyperplaneSchedule) -> Vec<f64> {
    schedule
        .planes
        .iter()
        .flatten()
        .flat_map(|h| [h.w.x, h.w.y, h.b])
        .collect()
}

/// Decoded trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t_final: f64,
    pub states: Vec<RobotState>,
    pub controls: Vec<ControlInput>,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.t_final / self.controls.len() as f64
    }

    pub fn interval_polynomial(&self, k: usize) -> IntervalPolynomial {
        let h = self.step();
        let (_, st) = rk4(&self.states[k].to_array(), &[self.controls[k].v, self.controls[k].omega], h);
        dense_output(self.states[k], &st, h)
    }

    pub fn interval_polynomials(&self) -> Vec<IntervalPolynomial> {
        (0..self.controls.len()).map(|k| self.interval_polynomial(k)).collect()
    }
}

/// Sparse symmetric block `h` (row-major) over variables `vars`.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBlock {
    pub vars: Vec<usize>,
    pub h: Vec<f64>,
}

/// Values, first derivatives and Lagrangian Hessian of an NLP at a point.
#[derive(Clone, Debug)]
pub struct NlpEval {
    pub f: f64,
    pub grad: Vec<f64>,
    pub c_eq: Vec<f64>,
    pub c_in: Vec<f64>,
    pub j_eq: SparseRows,
    pub j_in: SparseRows,
    /// Blocks of `∇²f − Σλ_eq∇²c_eq − Σλ_in∇²c_in`.
    pub hessian: Vec<HessianBlock>,
}

/// Smooth NLP `min f(z; p)  s.t.  c_eq(z; p) = 0,  c_in(z; p) ≥ 0` with
/// parameters `p` that stay fixed within one major iteration.
pub trait Nlp: Sync {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_in(&self) -> usize;
    /// `(f, c_eq, c_in)`.
    fn values(&self, z: &[f64], p: &[f64]) -> (f64, Vec<f64>, Vec<f64>);
    fn evaluate(&self, z: &[f64], p: &[f64], lambda_eq: &[f64], lambda_in: &[f64]) -> NlpEval;
}

#[derive(Clone, Debug)]
pub struct TranscribedNlp {
    pub problem: PlanningProblem,
    pub variant: Variant,
    pub layout: Layout,
    eq_kinds: Vec<ConstraintKind>,
    in_kinds: Vec<ConstraintKind>,
    /// Subtracted from each inequality residual in the solver-facing form.
    in_offsets: Vec<f64>,
}

/// Per-interval quantities for a generic scalar.
struct IntervalTerms<S> {
    end: [S; 3],
    pos: BernsteinPoly<S>,
    cost: S,
}

fn interval_terms<S: Scalar>(x: &[S; 3], u: &[S; 2], t: S, n: usize, alpha: f64, cost: StageCost) -> IntervalTerms<S> {
    let h = t * (1.0 / n as f64);
    let (end, stages) = rk4(x, u, h);
    let c = dense_coeffs(x, &stages, h);
    // monomial position coefficients → Bernstein (degree 3): β_i = Σ_j C(i,j)/C(3,j) c_j
    let mut flat = Vec::with_capacity(8);
    for i in 0..4 {
        for d in 0..2 {
            let mut acc = S::zero();
            for (j, cj) in c.iter().enumerate().take(i + 1) {
                let w = crate::bernstein::binomial(i, j) as f64 / crate::bernstein::binomial(3, j) as f64;
                acc += cj[d] * w;
            }
            flat.push(acc);
        }
    }
    let pos = BernsteinPoly::from_flat(3, 2, flat).expect("finite position coefficients");
    let stage = match cost {
        StageCost::ControlEffort => (u[0] * u[0] + u[1] * u[1]) * alpha,
        StageCost::None => S::zero(),
    };
    IntervalTerms {
        end,
        pos,
        cost: h + h * stage,
    }
}

/// Bernstein coefficients of `w(τ)ᵀp(τ) + b(τ) − margin` for linear
/// hyperplane splines with knot values `a = (w, b)` and `c = (w, b)`.
pub fn collision_polynomial<S: Scalar>(pos: &BernsteinPoly<S>, a: [S; 3], c: [S; 3], margin: f64) -> [S; COLLISION_COEFFS] {
    let w = BernsteinPoly::from_flat(1, 2, vec![a[0], a[1], c[0], c[1]]).expect("finite");
    let wp = product(&w, pos, ProductMode::Dot).expect("degree within bounds");
    let b = BernsteinPoly::scalar(vec![a[2], c[2]])
        .expect("finite")
        .elevate(COLLISION_DEGREE)
        .expect("degree within bounds");
    let g = wp.add(&b).expect("matching degree").offset(-margin);
    let mut out = [S::zero(); COLLISION_COEFFS];
    out.copy_from_slice(g.flat());
    out
}

fn cst3<S: Scalar>(h: &Hyperplane) -> [S; 3] {
    [S::cst(h.w.x), S::cst(h.w.y), S::cst(h.b)]
}

type J6 = Jet<6>;
type J12 = Jet<12>;

impl TranscribedNlp {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn eq_kinds(&self) -> &[ConstraintKind] {
        &self.eq_kinds
    }

    pub fn in_kinds(&self) -> &[ConstraintKind] {
        &self.in_kinds
    }

    /// Residual kinds in the order returned by [`TranscribedNlp::eval_constraints`].
    pub fn constraint_kinds(&self) -> Vec<ConstraintKind> {
        self.eq_kinds.iter().chain(&self.in_kinds).copied().collect()
    }

    pub fn n_obstacles(&self) -> usize {
        self.layout.n_obstacles
    }

    pub fn count_kind(&self, pred: impl Fn(&ConstraintKind) -> bool) -> usize {
        self.eq_kinds.iter().chain(&self.in_kinds).filter(|k| pred(k)).count()
    }

    fn check_len(&self, z: &[f64], p: &[f64]) -> Result<(), TranscriptionError> {
        if z.len() != self.n_vars() {
            return Err(TranscriptionError::Dimension {
                expected: self.n_vars(),
                got: z.len(),
            });
        }
        let np = self.expected_params();
        if p.len() != np {
            return Err(TranscriptionError::Dimension { expected: np, got: p.len() });
        }
        Ok(())
    }

    /// Required parameter vector length (zero for the coupled variant).
    pub fn expected_params(&self) -> usize {
        match self.variant {
            Variant::Decoupled => self.layout.n_params(),
            Variant::Coupled => 0,
        }
    }

    pub fn freeze_hyperplanes(&self, schedule: &HyperplaneSchedule) -> Result<Vec<f64>, TranscriptionError> {
        let expected = self.layout.n_params();
        let got = schedule.n_knots() * schedule.n_obstacles();
        if schedule.n_knots() != self.layout.n_knots()
            || schedule.planes.iter().any(|r| r.len() != self.layout.n_obstacles)
        {
            return Err(TranscriptionError::Dimension {
                expected,
                got: 3 * got,
            });
        }
        Ok(freeze_hyperplanes(schedule))
    }

    pub fn decode(&self, z: &[f64]) -> Trajectory {
        let l = &self.layout;
        let n = l.n_intervals;
        Trajectory {
            t_final: z[l.t()],
            states: (0..=n)
                .map(|k| RobotState::new(z[l.x(k)], z[l.x(k) + 1], z[l.x(k) + 2]))
                .collect(),
            controls: (0..n).map(|k| ControlInput::new(z[l.u(k)], z[l.u(k) + 1])).collect(),
        }
    }

    /// Decision vector from a trajectory and (coupled only) hyperplanes.
    pub fn encode(&self, traj: &Trajectory, schedule: &HyperplaneSchedule) -> Vec<f64> {
        let l = &self.layout;
        let mut z = vec![0.0; l.n_vars()];
        z[l.t()] = traj.t_final;
        for (k, s) in traj.states.iter().enumerate() {
            z[l.x(k)..l.x(k) + 3].copy_from_slice(&s.to_array());
        }
        for (k, u) in traj.controls.iter().enumerate() {
            z[l.u(k)] = u.v;
            z[l.u(k) + 1] = u.omega;
        }
        if self.variant == Variant::Coupled {
            for k in 0..l.n_knots() {
                for o in 0..l.n_obstacles {
                    let i = l.plane(k, o).expect("coupled");
                    let h = schedule.get(k, o);
                    z[i..i + 3].copy_from_slice(&[h.w.x, h.w.y, h.b]);
                }
            }
        }
        z
    }

    /// Hyperplane values in use at `(z, params)`.
    pub fn schedule_at(&self, z: &[f64], params: &[f64]) -> HyperplaneSchedule {
        let l = &self.layout;
        match self.variant {
            Variant::Decoupled => HyperplaneSchedule::from_params(params, l.n_knots(), l.n_obstacles).expect("layout"),
            Variant::Coupled => {
                let base = l.plane(0, 0).unwrap_or(l.n_vars());
                HyperplaneSchedule::from_params(&z[base..], l.n_knots(), l.n_obstacles).expect("layout")
            }
        }
    }

    fn plane_vals<S: Scalar>(&self, z: &[f64], p: &[f64], k: usize, o: usize) -> [S; 3] {
        let i = match self.layout.plane(k, o) {
            Some(i) => return [S::cst(z[i]), S::cst(z[i + 1]), S::cst(z[i + 2])],
            None => 3 * (k * self.layout.n_obstacles + o),
        };
        [S::cst(p[i]), S::cst(p[i + 1]), S::cst(p[i + 2])]
    }

    /// Exact residuals, equality rows first, then inequality rows.
    pub fn eval_constraints(&self, z: &[f64], params: &[f64]) -> Result<Vec<f64>, TranscriptionError> {
        self.check_len(z, params)?;
        let (_, mut eq, inq) = self.raw_values(z, params);
        eq.extend(inq);
        Ok(eq)
    }

    /// Sparse Jacobian of [`TranscribedNlp::eval_constraints`].
    pub fn eval_jacobian(&self, z: &[f64], params: &[f64]) -> Result<SparseRows, TranscriptionError> {
        self.check_len(z, params)?;
        let e = self.derivatives(z, params, None);
        let mut j = e.j_eq;
        j.rows.extend(e.j_in.rows);
        Ok(j)
    }

    /// Degree-4 collision coefficients per interval per obstacle.
    pub fn collision_coefficients(&self, traj: &Trajectory, schedule: &HyperplaneSchedule) -> Vec<Vec<[f64; COLLISION_COEFFS]>> {
        let margin = self.problem.safety_radius();
        (0..self.layout.n_intervals)
            .map(|k| {
                let pos = traj.interval_polynomial(k).position_bernstein();
                (0..self.layout.n_obstacles)
                    .map(|o| collision_polynomial(&pos, cst3(&schedule.get(k, o)), cst3(&schedule.get(k + 1, o)), margin))
                    .collect()
            })
            .collect()
    }

    fn raw_values(&self, z: &[f64], p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let pr = &self.problem;
        let n = l.n_intervals;
        let t = z[l.t()];
        let mut f = 0.0;
        let mut eq = Vec::with_capacity(self.eq_kinds.len());
        let start = pr.start.to_array();
        for i in 0..3 {
            eq.push(z[l.x(0) + i] - start[i]);
        }
        let mut terms = Vec::with_capacity(n);
        for k in 0..n {
            let x = [z[l.x(k)], z[l.x(k) + 1], z[l.x(k) + 2]];
            let u = [z[l.u(k)], z[l.u(k) + 1]];
            let it = interval_terms(&x, &u, t, n, pr.alpha, pr.stage_cost);
            for i in 0..3 {
                eq.push(it.end[i] - z[l.x(k + 1) + i]);
            }
            f += it.cost;
            terms.push(it);
        }
        let goal = pr.goal.to_array();
        for i in 0..3 {
            eq.push(z[l.x(n) + i] - goal[i]);
        }
        let mut inq = Vec::with_capacity(self.in_kinds.len());
        for kind in &self.in_kinds {
            let v = match *kind {
                // filled per interval below
                ConstraintKind::Collision { .. } => f64::NAN,
                ConstraintKind::Vertex { knot, obstacle, vertex } => {
                    let pv: [f64; 3] = self.plane_vals(z, p, knot, obstacle);
                    let v = pr.obstacles[obstacle].vertices()[vertex];
                    -(pv[0] * v.x + pv[1] * v.y + pv[2])
                }
                ConstraintKind::Norm { knot, obstacle } => {
                    let pv: [f64; 3] = self.plane_vals(z, p, knot, obstacle);
                    1.0 - pv[0] * pv[0] - pv[1] * pv[1]
                }
                ConstraintKind::TimeLower => t - pr.t_bounds.0,
                ConstraintKind::TimeUpper => pr.t_bounds.1 - t,
                ConstraintKind::StateBound { knot, component, upper } => {
                    let x = z[l.x(knot) + component];
                    if upper {
                        pr.state_upper[component] - x
                    } else {
                        x - pr.state_lower[component]
                    }
                }
                ConstraintKind::ControlBound { interval, component, upper } => {
                    let u = z[l.u(interval) + component];
                    if upper {
                        pr.control_upper[component] - u
                    } else {
                        u - pr.control_lower[component]
                    }
                }
                _ => unreachable!("equality kind in inequality list"),
            };
            inq.push(v);
        }
        // collision rows are laid out contiguously per interval then obstacle
        let margin = pr.safety_radius();
        let mut row = 0;
        for (k, it) in terms.iter().enumerate() {
            for o in 0..l.n_obstacles {
                let g = collision_polynomial(&it.pos, self.plane_vals(z, p, k, o), self.plane_vals(z, p, k + 1, o), margin);
                inq[row..row + COLLISION_COEFFS].copy_from_slice(&g);
                row += COLLISION_COEFFS;
            }
        }
        (f, eq, inq)
    }

    /// Gradient, Jacobians, and (when multipliers are given) Lagrangian
    /// Hessian blocks.
    fn derivatives(&self, z: &[f64], p: &[f64], lambdas: Option<(&[f64], &[f64])>) -> NlpEval {
        let l = &self.layout;
        let pr = &self.problem;
        let n = l.n_intervals;
        let m = l.n_obstacles;
        let nv = l.n_vars();
        let margin = pr.safety_radius();
        let t = z[l.t()];
        let mut grad = vec![0.0; nv];
        let mut f = 0.0;
        let mut c_eq = vec![0.0; self.eq_kinds.len()];
        let mut j_eq = SparseRows::new(nv);
        j_eq.rows = vec![Vec::new(); self.eq_kinds.len()];
        let n_in = self.in_kinds.len();
        let mut c_in = vec![0.0; n_in];
        let mut j_in = SparseRows::new(nv);
        j_in.rows = vec![Vec::new(); n_in];
        let mut hessian = Vec::new();

        let start = pr.start.to_array();
        let goal = pr.goal.to_array();
        for i in 0..3 {
            c_eq[i] = z[l.x(0) + i] - start[i];
            j_eq.rows[i] = vec![(l.x(0) + i, 1.0)];
            let r = 3 + 3 * n + i;
            c_eq[r] = z[l.x(n) + i] - goal[i];
            j_eq.rows[r] = vec![(l.x(n) + i, 1.0)];
        }

        for k in 0..n {
            let slots = [l.t(), l.x(k), l.x(k) + 1, l.x(k) + 2, l.u(k), l.u(k) + 1];
            let tj = J6::var(t, 0);
            let x = [J6::var(z[slots[1]], 1), J6::var(z[slots[2]], 2), J6::var(z[slots[3]], 3)];
            let u = [J6::var(z[slots[4]], 4), J6::var(z[slots[5]], 5)];
            let it = interval_terms(&x, &u, tj, n, pr.alpha, pr.stage_cost);
            let mut hk = [[0.0; 6]; 6];
            f += it.cost.v;
            for a in 0..6 {
                grad[slots[a]] += it.cost.g[a];
            }
            add_h(&mut hk, &it.cost, 1.0);
            for i in 0..3 {
                let r = 3 + 3 * k + i;
                c_eq[r] = it.end[i].v - z[l.x(k + 1) + i];
                let mut row: Vec<(usize, f64)> = (0..6).map(|a| (slots[a], it.end[i].g[a])).collect();
                row.push((l.x(k + 1) + i, -1.0));
                j_eq.rows[r] = row;
                if let Some((le, _)) = lambdas {
                    add_h(&mut hk, &it.end[i], -le[r]);
                }
            }
            for o in 0..m {
                let base = self.collision_row(k, o);
                match self.variant {
                    Variant::Decoupled => {
                        let g = collision_polynomial(&it.pos, self.plane_vals(z, p, k, o), self.plane_vals(z, p, k + 1, o), margin);
                        for (c, gj) in g.iter().enumerate() {
                            c_in[base + c] = gj.v;
                            j_in.rows[base + c] = (0..6).map(|a| (slots[a], gj.g[a])).collect();
                            if let Some((_, li)) = lambdas {
                                add_h(&mut hk, gj, -li[base + c]);
                            }
                        }
                    }
                    Variant::Coupled => {
                        let pa = l.plane(k, o).expect("coupled");
                        let pb = l.plane(k + 1, o).expect("coupled");
                        let lift: [usize; 6] = [0, 1, 2, 3, 4, 5];
                        let pos12: Vec<J12> = it.pos.flat().iter().map(|j| j.lift(&lift)).collect();
                        let pos12 = BernsteinPoly::from_flat(3, 2, pos12).expect("finite");
                        let a = [J12::var(z[pa], 6), J12::var(z[pa + 1], 7), J12::var(z[pa + 2], 8)];
                        let c = [J12::var(z[pb], 9), J12::var(z[pb + 1], 10), J12::var(z[pb + 2], 11)];
                        let g = collision_polynomial(&pos12, a, c, margin);
                        let s12 = [
                            slots[0], slots[1], slots[2], slots[3], slots[4], slots[5], pa, pa + 1, pa + 2, pb, pb + 1, pb + 2,
                        ];
                        let mut h12 = [[0.0; 12]; 12];
                        for (ci, gj) in g.iter().enumerate() {
                            c_in[base + ci] = gj.v;
                            j_in.rows[base + ci] = (0..12).map(|a| (s12[a], gj.g[a])).collect();
                            if let Some((_, li)) = lambdas {
                                add_h(&mut h12, gj, -li[base + ci]);
                            }
                        }
                        if lambdas.is_some() {
                            hessian.push(block(&s12, &h12));
                        }
                    }
                }
            }
            if lambdas.is_some() {
                hessian.push(block(&slots, &hk));
            }
        }

        for (r, kind) in self.in_kinds.iter().enumerate() {
            let (v, row): (f64, Vec<(usize, f64)>) = match *kind {
                ConstraintKind::Collision { .. } => continue,
                ConstraintKind::Vertex { knot, obstacle, vertex } => {
                    let i = l.plane(knot, obstacle).expect("coupled");
                    let vx = pr.obstacles[obstacle].vertices()[vertex];
                    (-(z[i] * vx.x + z[i + 1] * vx.y + z[i + 2]), vec![(i, -vx.x), (i + 1, -vx.y), (i + 2, -1.0)])
                }
                ConstraintKind::Norm { knot, obstacle } => {
                    let i = l.plane(knot, obstacle).expect("coupled");
                    if let Some((_, li)) = lambdas {
                        // -λ ∇²(1 − ‖w‖²) = 2λ I
                        hessian.push(HessianBlock {
                            vars: vec![i, i + 1],
                            h: vec![2.0 * li[r], 0.0, 0.0, 2.0 * li[r]],
                        });
                    }
                    (
                        1.0 - z[i] * z[i] - z[i + 1] * z[i + 1],
                        vec![(i, -2.0 * z[i]), (i + 1, -2.0 * z[i + 1])],
                    )
                }
                ConstraintKind::TimeLower => (t - pr.t_bounds.0, vec![(l.t(), 1.0)]),
                ConstraintKind::TimeUpper => (pr.t_bounds.1 - t, vec![(l.t(), -1.0)]),
                ConstraintKind::StateBound { knot, component, upper } => {
                    let i = l.x(knot) + component;
                    if upper {
                        (pr.state_upper[component] - z[i], vec![(i, -1.0)])
                    } else {
                        (z[i] - pr.state_lower[component], vec![(i, 1.0)])
                    }
                }
                ConstraintKind::ControlBound { interval, component, upper } => {
                    let i = l.u(interval) + component;
                    if upper {
                        (pr.control_upper[component] - z[i], vec![(i, -1.0)])
                    } else {
                        (z[i] - pr.control_lower[component], vec![(i, 1.0)])
                    }
                }
                _ => unreachable!("equality kind in inequality list"),
            };
            c_in[r] = v;
            j_in.rows[r] = row;
        }
        NlpEval {
            f,
            grad,
            c_eq,
            c_in,
            j_eq,
            j_in,
            hessian,
        }
    }

    /// First inequality row of the collision block `(k, o)`.
    pub fn collision_row(&self, k: usize, o: usize) -> usize {
        (k * self.layout.n_obstacles + o) * COLLISION_COEFFS
    }
}

fn add_h<const K: usize>(acc: &mut [[f64; K]; K], j: &Jet<K>, w: f64) {
    if w == 0.0 {
        return;
    }
    for a in 0..K {
        for b in 0..K {
            acc[a][b] += w * j.h[a][b];
        }
    }
}

fn block<const K: usize>(slots: &[usize; K], h: &[[f64; K]; K]) -> HessianBlock {
    HessianBlock {
        vars: slots.to_vec(),
        h: h.iter().flatten().copied().collect(),
    }
}

impl Nlp for TranscribedNlp {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    fn n_eq(&self) -> usize {
        self.eq_kinds.len()
    }

    fn n_in(&self) -> usize {
        self.in_kinds.len()
    }

    fn values(&self, z: &[f64], p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (f, eq, mut inq) = self.raw_values(z, p);
        for (c, o) in inq.iter_mut().zip(&self.in_offsets) {
            *c -= o;
        }
        (f, eq, inq)
    }

    fn evaluate(&self, z: &[f64], p: &[f64], lambda_eq: &[f64], lambda_in: &[f64]) -> NlpEval {
        let mut e = self.derivatives(z, p, Some((lambda_eq, lambda_in)));
        for (c, o) in e.c_in.iter_mut().zip(&self.in_offsets) {
            *c -= o;
        }
        e
    }
}

/// Transcribe `problem` in the requested variant.
pub fn build(problem: &PlanningProblem, variant: Variant) -> Result<TranscribedNlp, TranscriptionError> {
    problem.validate()?;
    let n = problem.n_intervals;
    let m = problem.obstacles.len();
    let layout = Layout {
        n_intervals: n,
        n_obstacles: m,
        variant,
    };
    let mut eq_kinds = Vec::with_capacity(3 * n + 6);
    eq_kinds.extend((0..3).map(|component| ConstraintKind::Start { component }));
    for interval in 0..n {
        eq_kinds.extend((0..3).map(|component| ConstraintKind::Shooting { interval, component }));
    }
    eq_kinds.extend((0..3).map(|component| ConstraintKind::Goal { component }));

    let mut in_kinds = Vec::new();
    let mut in_offsets = Vec::new();
    for interval in 0..n {
        for obstacle in 0..m {
            for coeff in 0..COLLISION_COEFFS {
                in_kinds.push(ConstraintKind::Collision { interval, obstacle, coeff });
                in_offsets.push(CONSTRAINT_TIGHTENING);
            }
        }
    }
    if variant == Variant::Coupled {
        for knot in 0..=n {
            for (obstacle, poly) in problem.obstacles.iter().enumerate() {
                for vertex in 0..poly.len() {
                    in_kinds.push(ConstraintKind::Vertex { knot, obstacle, vertex });
                    in_offsets.push(CONSTRAINT_TIGHTENING);
                }
            }
        }
        for knot in 0..=n {
            for obstacle in 0..m {
                in_kinds.push(ConstraintKind::Norm { knot, obstacle });
                in_offsets.push(CONSTRAINT_TIGHTENING);
            }
        }
    }
    let mut push = |k: ConstraintKind| {
        in_kinds.push(k);
        in_offsets.push(0.0);
    };
    push(ConstraintKind::TimeLower);
    push(ConstraintKind::TimeUpper);
    for knot in 1..n {
        for component in 0..3 {
            if problem.state_lower[component].is_finite() {
                push(ConstraintKind::StateBound { knot, component, upper: false });
            }
            if problem.state_upper[component].is_finite() {
                push(ConstraintKind::StateBound { knot, component, upper: true });
            }
        }
    }
    for interval in 0..n {
        for component in 0..2 {
            if problem.control_lower[component].is_finite() {
                push(ConstraintKind::ControlBound { interval, component, upper: false });
            }
            if problem.control_upper[component].is_finite() {
                push(ConstraintKind::ControlBound { interval, component, upper: true });
            }
        }
    }
    Ok(TranscribedNlp {
        problem: problem.clone(),
        variant,
        layout,
        eq_kinds,
        in_kinds,
        in_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(cx: f64, cy: f64, s: f64) -> ConvexPolytope {
        ConvexPolytope::rectangle(cx - s, cy - s, cx + s, cy + s).unwrap()
    }

    fn problem(obstacles: Vec<ConvexPolytope>) -> PlanningProblem {
        let a = std::f64::consts::FRAC_PI_4;
        PlanningProblem::in_arena(RobotState::new(0.0, 0.0, a), RobotState::new(10.0, 10.0, a), obstacles)
    }

    fn straight(nlp: &TranscribedNlp, t: f64) -> Trajectory {
        let pr = &nlp.problem;
        let n = pr.n_intervals;
        let (s, g) = (pr.start, pr.goal);
        let d = ((g.x - s.x).powi(2) + (g.y - s.y).powi(2)).sqrt();
        let th = (g.y - s.y).atan2(g.x - s.x);
        Trajectory {
            t_final: t,
            states: (0..=n)
                .map(|k| {
                    let f = k as f64 / n as f64;
                    RobotState::new(s.x + f * (g.x - s.x), s.y + f * (g.y - s.y), th)
                })
                .collect(),
            controls: vec![ControlInput::new(d / t, 0.0); n],
        }
    }

    fn facing_schedule(nlp: &TranscribedNlp, traj: &Trajectory) -> HyperplaneSchedule {
        let planes = traj
            .states
            .iter()
            .map(|s| {
                nlp.problem
                    .obstacles
                    .iter()
                    .map(|o| Hyperplane::supporting(Vec2::new(s.x, s.y) - o.centroid(), o.vertices()))
                    .collect()
            })
            .collect();
        HyperplaneSchedule { planes }
    }

    #[test]
    fn counts_match_accounting() {
        let obs: Vec<_> = (0..5).map(|i| square(1.5 + 1.6 * i as f64, 7.0, 0.4)).collect();
        let pr = problem(obs);
        let d = build(&pr, Variant::Decoupled).unwrap();
        let c = build(&pr, Variant::Coupled).unwrap();
        assert_eq!(c.n_vars() - d.n_vars(), 5 * 3 * 21);
        let vertex = |k: &ConstraintKind| matches!(k, ConstraintKind::Vertex { .. });
        assert_eq!(c.count_kind(vertex), 5 * 4 * 21);
        assert_eq!(d.count_kind(vertex), 0);
        for knot in 0..20 {
            let pair = c.count_kind(|k| matches!(*k, ConstraintKind::Vertex { knot: kk, .. } if kk == knot || kk == knot + 1));
            assert_eq!(pair, 40);
        }
        assert_eq!(d.count_kind(|k| matches!(k, ConstraintKind::Collision { .. })), 20 * 5 * 5);
    }

    #[test]
    fn zero_obstacles_has_no_collision_rows() {
        let pr = problem(vec![]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        assert_eq!(nlp.count_kind(|k| matches!(k, ConstraintKind::Collision { .. })), 0);
        let z = nlp.encode(&straight(&nlp, 20.0), &HyperplaneSchedule::uniform(21, vec![]));
        let j = nlp.eval_jacobian(&z, &[]).unwrap();
        let kinds = nlp.constraint_kinds();
        for (r, k) in kinds.iter().enumerate() {
            assert!(!j.rows[r].is_empty());
            assert!(!matches!(k, ConstraintKind::Collision { .. } | ConstraintKind::Vertex { .. } | ConstraintKind::Norm { .. }));
        }
    }

    #[test]
    fn rejects_start_in_collision() {
        let pr = problem(vec![square(0.5, 0.5, 0.45)]);
        assert!(matches!(build(&pr, Variant::Decoupled), Err(TranscriptionError::Rejected(_))));
    }

    #[test]
    fn far_trajectory_is_clear_and_endpoints_interpolate() {
        let pr = problem(vec![square(8.0, 2.0, 0.5), square(2.0, 8.0, 0.5)]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let traj = straight(&nlp, 18.0);
        let sch = facing_schedule(&nlp, &traj);
        let p = nlp.freeze_hyperplanes(&sch).unwrap();
        let z = nlp.encode(&traj, &sch);
        let res = nlp.eval_constraints(&z, &p).unwrap();
        let kinds = nlp.constraint_kinds();
        for (k, r) in kinds.iter().zip(&res) {
            if let ConstraintKind::Collision { interval, obstacle, coeff } = *k {
                assert!(*r >= 0.0);
                let knot = match coeff {
                    0 => interval,
                    4 => interval + 1,
                    _ => continue,
                };
                let s = traj.states[knot];
                let h = sch.get(knot, obstacle);
                let direct = h.signed_distance(Vec2::new(s.x, s.y)) - pr.safety_radius();
                assert!((r - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crossing_trajectory_has_negative_residual() {
        let pr = problem(vec![square(5.0, 5.0, 0.5)]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let traj = straight(&nlp, 18.0);
        let sch = HyperplaneSchedule::uniform(21, vec![Hyperplane::supporting(Vec2::new(1.0, -1.0), pr.obstacles[0].vertices())]);
        let p = nlp.freeze_hyperplanes(&sch).unwrap();
        let z = nlp.encode(&traj, &sch);
        let res = nlp.eval_constraints(&z, &p).unwrap();
        let kinds = nlp.constraint_kinds();
        // knots 9, 10, 11 surround the centre (5,5); interval 10 contains it
        let pierced = kinds
            .iter()
            .zip(&res)
            .any(|(k, r)| matches!(*k, ConstraintKind::Collision { interval: 10, .. }) && *r < 0.0);
        assert!(pierced);
    }

    #[test]
    fn constant_schedule_reduces_to_coordinate() {
        let pr = problem(vec![square(5.0, 8.0, 1.0)]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let traj = straight(&nlp, 18.0);
        let h = Hyperplane::new(Vec2::new(1.0, 0.0), -1.0);
        let sch = HyperplaneSchedule::uniform(21, vec![h]);
        let coeffs = nlp.collision_coefficients(&traj, &sch);
        for (k, row) in coeffs.iter().enumerate() {
            let px = traj.interval_polynomial(k).position_bernstein().elevate(4).unwrap();
            for c in 0..5 {
                let expect = px.coeff(c)[0] - (1.0 + pr.safety_radius());
                assert!((row[0][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn schedule_spline_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let planes = (0..3)
            .map(|_| vec![Hyperplane::new(Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), rng.gen_range(-3.0..3.0))])
            .collect();
        let sch = HyperplaneSchedule { planes };
        let spline = sch.interval_spline(1, 0);
        let a = sch.get(1, 0);
        let b = sch.get(2, 0);
        assert_eq!(spline.eval(0.0).unwrap(), vec![a.w.x, a.w.y, a.b]);
        assert_eq!(spline.eval(1.0).unwrap(), vec![b.w.x, b.w.y, b.b]);
        let (b0, b1) = sch.interval_monomial(1, 0);
        for i in 0..20 {
            let tau = i as f64 / 19.0;
            let v = spline.eval(tau).unwrap();
            for d in 0..3 {
                assert!((v[d] - (b0[d] + b1[d] * tau)).abs() < 1e-14);
            }
        }
        assert!(matches!(
            HyperplaneSchedule::from_params(&[0.0; 5], 1, 2),
            Err(TranscriptionError::Dimension { .. })
        ));
    }

    #[test]
    fn coupled_vertex_row_gradient_is_vertex() {
        let pr = problem(vec![square(5.0, 8.0, 1.0)]);
        let nlp = build(&pr, Variant::Coupled).unwrap();
        let traj = straight(&nlp, 18.0);
        let sch = facing_schedule(&nlp, &traj);
        let z = nlp.encode(&traj, &sch);
        let j = nlp.eval_jacobian(&z, &[]).unwrap();
        let kinds = nlp.constraint_kinds();
        for (r, k) in kinds.iter().enumerate() {
            if let ConstraintKind::Vertex { knot, obstacle, vertex } = *k {
                let v = pr.obstacles[obstacle].vertices()[vertex];
                let i = nlp.layout.plane(knot, obstacle).unwrap();
                assert_eq!(j.rows[r], vec![(i, -v.x), (i + 1, -v.y), (i + 2, -1.0)]);
            }
        }
    }

    #[test]
    fn decoupled_has_no_hyperplane_curvature() {
        // collision rows are affine in the frozen parameters: perturbing p
        // changes residuals linearly
        let pr = problem(vec![square(5.0, 8.0, 1.0)]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let traj = straight(&nlp, 18.0);
        let sch = facing_schedule(&nlp, &traj);
        let p = nlp.freeze_hyperplanes(&sch).unwrap();
        let z = nlp.encode(&traj, &sch);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dp: Vec<f64> = p.iter().map(|_| rng.gen_range(-0.1..0.1)).collect();
        let at = |s: f64| {
            let q: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + s * b).collect();
            nlp.eval_constraints(&z, &q).unwrap()
        };
        let (r0, r1, r2) = (at(0.0), at(1.0), at(2.0));
        for i in 0..r0.len() {
            assert!((r2[i] - 2.0 * r1[i] + r0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shooting_consistent_at_simulated_trajectory() {
        let pr = problem(vec![]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let mut traj = straight(&nlp, 20.0);
        let h = traj.step();
        traj.controls = (0..20).map(|k| ControlInput::new(0.7, 0.3 * (k as f64).sin())).collect();
        for k in 0..20 {
            traj.states[k + 1] = crate::dynamics::rk4_step(traj.states[k], traj.controls[k], h).0;
        }
        let z = nlp.encode(&traj, &HyperplaneSchedule::uniform(21, vec![]));
        let res = nlp.eval_constraints(&z, &[]).unwrap();
        for (k, r) in nlp.constraint_kinds().iter().zip(&res) {
            if matches!(k, ConstraintKind::Shooting { .. }) {
                assert!(r.abs() <= 1e-8);
            }
        }
        for k in 0..20 {
            let e = traj.interval_polynomial(k).eval(1.0);
            assert!((e.x - traj.states[k + 1].x).abs() < 1e-13);
        }
    }
}
