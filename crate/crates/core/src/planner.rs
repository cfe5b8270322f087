//! End-to-end planning: straight-line initial guess, inter-iteration
//! hyperplane updates for the decoupled variant, and safety certification.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernstein::BernsteinPoly;
use crate::dynamics::{ControlInput, RobotState};
use crate::geometry::{hull_polytope_clearance, point_polytope_distance, ConvexPolytope, Vec2};
use crate::sqp::{self, IterationCallback, SolveTrace, SqpSettings, SqpStatus};
use crate::svm::{
    fallback_direction, normal_angle, solve_svm, trust_region_filter, Hyperplane, SeparationProblem, SvmError,
    SvmMethod,
};
use crate::transcription::{
    build, collision_polynomial, HyperplaneSchedule, PlanningProblem, Trajectory, TranscribedNlp,
    TranscriptionError, Variant, COLLISION_COEFFS, DEFAULT_EPS, DEFAULT_N,
};

/// Slack below `r + ε` before a point or control polygon counts as colliding.
pub const COLLISION_FLAG_TOL: f64 = 1e-6;
/// Certification tolerance on Bernstein coefficients.
pub const COEFF_TOL: f64 = 1e-9;
/// Certification tolerance on sampled clearance.
pub const SAMPLE_TOL: f64 = 1e-6;
pub const SAMPLES_PER_INTERVAL: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error("invalid planner configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub variant: Variant,
    /// Trust region for updates at colliding knots (rad).
    pub theta_bounds: f64,
    /// Trust region for updates on colliding intervals (rad).
    pub theta_segments: f64,
    pub eps: f64,
    pub n_intervals: usize,
    /// Smallest change in `w` or `b` that counts as an update.
    pub change_tol: f64,
    /// Restarts from re-seeded hyperplanes after a locally infeasible solve.
    pub restorations: usize,
    pub sqp: SqpSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Decoupled,
            theta_bounds: 10f64.to_radians(),
            theta_segments: 20f64.to_radians(),
            eps: DEFAULT_EPS,
            n_intervals: DEFAULT_N,
            change_tol: 1e-7,
            restorations: 2,
            sqp: SqpSettings::default(),
        }
    }
}

impl PlannerConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let right = std::f64::consts::FRAC_PI_2;
        for t in [self.theta_bounds, self.theta_segments] {
            if !(t > 0.0 && t < right) {
                return Err(PlanError::Config(format!("trust region {t} rad outside (0, π/2)")));
            }
        }
        if !(self.eps >= 0.0) || self.n_intervals < 2 {
            return Err(PlanError::Config("eps must be ≥ 0 and N ≥ 2".into()));
        }
        Ok(())
    }
}

/// Accumulated separator solve times (seconds).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SvmTimings {
    pub ls: f64,
    pub qp: f64,
}

fn timed_svm(prob: &SeparationProblem, t: &mut SvmTimings) -> Result<Vec2, SvmError> {
    let clock = Instant::now();
    let r = solve_svm(prob).map(|s| s.normal);
    let dt = clock.elapsed().as_secs_f64();
    match prob.method {
        SvmMethod::Ls => t.ls += dt,
        SvmMethod::Qp => t.qp += dt,
    }
    r
}

/// Normal for robot point `p` against `obstacle`, with LS fallback for QP
/// failures and the centroid fallback for a vanishing LS direction.
fn separator(p: Vec2, obstacle: &ConvexPolytope, method: SvmMethod, previous: Option<Vec2>, t: &mut SvmTimings) -> Vec2 {
    let ls = |t: &mut SvmTimings| {
        timed_svm(&SeparationProblem::new(p, obstacle, SvmMethod::Ls), t)
            .unwrap_or_else(|_| fallback_direction(obstacle.centroid(), previous))
    };
    match method {
        SvmMethod::Ls => ls(t),
        SvmMethod::Qp => timed_svm(&SeparationProblem::new(p, obstacle, SvmMethod::Qp), t).unwrap_or_else(|_| ls(t)),
    }
}

fn knot_in_collision(p: Vec2, obstacle: &ConvexPolytope, margin: f64) -> bool {
    point_polytope_distance(p, obstacle) < margin - COLLISION_FLAG_TOL
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub trajectory: Trajectory,
    pub schedule: HyperplaneSchedule,
    /// Separator used per knot per obstacle.
    pub methods: Vec<Vec<SvmMethod>>,
    pub timings: SvmTimings,
}

/// Straight-line initialisation with per-knot separators.
pub fn initial_guess(problem: &PlanningProblem) -> InitialGuess {
    let n = problem.n_intervals;
    let (s, g) = (problem.start, problem.goal);
    let dist = ((g.x - s.x).powi(2) + (g.y - s.y).powi(2)).sqrt();
    let heading = (g.y - s.y).atan2(g.x - s.x);
    let t0 = (1.25 * dist / problem.v_max()).clamp(problem.t_bounds.0, problem.t_bounds.1);
    let states: Vec<RobotState> = (0..=n)
        .map(|k| {
            let f = k as f64 / n as f64;
            RobotState::new(s.x + f * (g.x - s.x), s.y + f * (g.y - s.y), heading)
        })
        .collect();
    let trajectory = Trajectory {
        t_final: t0,
        controls: vec![ControlInput::new(dist / t0, 0.0); n],
        states,
    };
    let mut timings = SvmTimings::default();
    let (schedule, methods) = seed_schedule(&trajectory, problem, &mut timings);
    InitialGuess {
        trajectory,
        schedule,
        methods,
        timings,
    }
}

/// Per-knot separators: LS where the knot collides, QP elsewhere, each
/// shifted to support its obstacle.
pub fn seed_schedule(
    trajectory: &Trajectory,
    problem: &PlanningProblem,
    timings: &mut SvmTimings,
) -> (HyperplaneSchedule, Vec<Vec<SvmMethod>>) {
    let margin = problem.safety_radius();
    let mut methods = Vec::with_capacity(trajectory.states.len());
    let mut planes = Vec::with_capacity(trajectory.states.len());
    for (k, st) in trajectory.states.iter().enumerate() {
        let p = Vec2::new(st.x, st.y);
        let prev = (k > 0).then(|| Vec2::new(trajectory.states[k - 1].x, trajectory.states[k - 1].y));
        let mut row_m = Vec::with_capacity(problem.obstacles.len());
        let mut row_p = Vec::with_capacity(problem.obstacles.len());
        for obs in &problem.obstacles {
            let method = if knot_in_collision(p, obs, margin) {
                SvmMethod::Ls
            } else {
                SvmMethod::Qp
            };
            let w = separator(p, obs, method, prev, timings);
            row_m.push(method);
            row_p.push(Hyperplane::supporting(w, obs.vertices()));
        }
        methods.push(row_m);
        planes.push(row_p);
    }
    (HyperplaneSchedule { planes }, methods)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBranch {
    /// Some knot collides: re-solve the colliding knot pairs.
    Bounds,
    /// All knots clear, some control polygon collides.
    Segments,
    NoOp,
}

/// One applied hyperplane change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub branch: UpdateBranch,
    pub knot: usize,
    pub obstacle: usize,
    /// Rotation of the normal (rad).
    pub angle: f64,
    /// Trust region in force (rad).
    pub limit: f64,
    pub old: Hyperplane,
    pub new: Hyperplane,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub schedule: HyperplaneSchedule,
    pub branch: UpdateBranch,
    pub changes: Vec<UpdateRecord>,
}

/// `(knot, obstacle)` pairs whose knot position collides.
pub fn check_bounds(traj: &Trajectory, obstacles: &[ConvexPolytope], margin: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, s) in traj.states.iter().enumerate() {
        for (o, obs) in obstacles.iter().enumerate() {
            if knot_in_collision(Vec2::new(s.x, s.y), obs, margin) {
                out.push((k, o));
            }
        }
    }
    out
}

/// `(interval, obstacle)` pairs whose position control polygon comes closer
/// than `margin` to the obstacle.
pub fn check_segments(traj: &Trajectory, obstacles: &[ConvexPolytope], margin: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 0..traj.controls.len() {
        let pos = traj.interval_polynomial(k).position_bernstein();
        let pts: Vec<Vec2> = (0..=pos.degree()).map(|i| Vec2::new(pos.coeff(i)[0], pos.coeff(i)[1])).collect();
        for (o, obs) in obstacles.iter().enumerate() {
            if hull_polytope_clearance(&pts, obs) < margin - COLLISION_FLAG_TOL {
                out.push((k, o));
            }
        }
    }
    out
}

/// Inter-iteration hyperplane update for the trajectory encoded in `traj`.
pub fn update_hyperplanes(
    traj: &Trajectory,
    schedule: &HyperplaneSchedule,
    problem: &PlanningProblem,
    config: &PlannerConfig,
    timings: &mut SvmTimings,
) -> UpdateOutcome {
    let margin = problem.safety_radius();
    let obstacles = &problem.obstacles;
    let bounds = check_bounds(traj, obstacles, margin);
    let (branch, limit, targets): (UpdateBranch, f64, Vec<(usize, usize, SvmMethod)>) = if !bounds.is_empty() {
        let t = bounds.iter().map(|&(k, o)| (k, o, SvmMethod::Ls)).collect();
        (UpdateBranch::Bounds, config.theta_bounds, t)
    } else {
        let segs = check_segments(traj, obstacles, margin);
        if segs.is_empty() {
            return UpdateOutcome {
                schedule: schedule.clone(),
                branch: UpdateBranch::NoOp,
                changes: Vec::new(),
            };
        }
        let mut t: Vec<(usize, usize, SvmMethod)> = Vec::new();
        for &(i, o) in &segs {
            for k in [i, i + 1] {
                if !t.iter().any(|&(kk, oo, _)| kk == k && oo == o) {
                    t.push((k, o, SvmMethod::Qp));
                }
            }
        }
        (UpdateBranch::Segments, config.theta_segments, t)
    };
    let mut next = schedule.clone();
    let mut changes = Vec::new();
    for (k, o, method) in targets {
        let s = traj.states[k];
        let p = Vec2::new(s.x, s.y);
        let prev = (k > 0).then(|| Vec2::new(traj.states[k - 1].x, traj.states[k - 1].y));
        let obs = &obstacles[o];
        let old = schedule.get(k, o);
        let w_old = old.w.normalized();
        let w_new = separator(p, obs, method, prev, timings);
        let w = trust_region_filter(w_old, w_new, limit);
        let h = Hyperplane::supporting(w, obs.vertices());
        if (h.w - old.w).norm() > config.change_tol || (h.b - old.b).abs() > config.change_tol {
            changes.push(UpdateRecord {
                branch,
                knot: k,
                obstacle: o,
                angle: normal_angle(w_old, h.w),
                limit,
                old,
                new: h,
            });
            next.set(k, o, h);
        }
    }
    UpdateOutcome {
        schedule: next,
        branch,
        changes,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Success,
    Infeasible,
    SolverFailure,
    CertificationFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Stored coefficients or schedule do not match the obstacle set.
    Structure,
    Coefficient,
    Hyperplane,
    Sampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: CheckKind,
    pub interval: usize,
    pub obstacle: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    /// Bernstein coefficient check (including hyperplane validity).
    pub coefficients_pass: bool,
    /// Dense sampling check.
    pub sampling_pass: bool,
    /// `None` without obstacles.
    pub min_coefficient: Option<f64>,
    /// Smallest sampled `distance − (r + ε)`; `None` without obstacles.
    pub min_sampled_margin: Option<f64>,
    pub samples_per_interval: usize,
    pub violations: Vec<Violation>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.coefficients_pass && self.sampling_pass
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTimings {
    pub wall_ms: f64,
    pub ls_ms: f64,
    pub qp_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub variant: Variant,
    pub t_final: f64,
    pub states: Vec<RobotState>,
    pub controls: Vec<ControlInput>,
    /// Position control points `[[x, y]; 4]` per interval.
    pub position_bernstein: Vec<[[f64; 2]; 4]>,
    /// Degree-4 collision coefficients per interval per obstacle.
    pub collision_coefficients: Vec<Vec<[f64; COLLISION_COEFFS]>>,
    pub schedule: HyperplaneSchedule,
    pub trace: SolveTrace,
    pub certification: CertificationReport,
    pub timings: PlanTimings,
    pub n_vars: usize,
    pub n_constraints: usize,
    /// Branch taken by each update call (decoupled only).
    pub update_branches: Vec<UpdateBranch>,
    pub update_audit: Vec<UpdateRecord>,
    /// Restarts taken after locally infeasible solves.
    #[serde(default)]
    pub restorations: usize,
}

impl PlanResult {
    pub fn success(&self) -> bool {
        self.status == PlanStatus::Success
    }

    pub fn iterations(&self) -> usize {
        self.trace.n_iterations()
    }

    fn position_poly(&self, k: usize) -> BernsteinPoly<f64> {
        let flat = self.position_bernstein[k].iter().flatten().copied().collect();
        BernsteinPoly::from_flat(3, 2, flat).expect("stored coefficients")
    }
}

fn position_points(poly: &BernsteinPoly<f64>) -> [[f64; 2]; 4] {
    let mut out = [[0.0; 2]; 4];
    for (i, o) in out.iter_mut().enumerate() {
        *o = [poly.coeff(i)[0], poly.coeff(i)[1]];
    }
    out
}

/// Re-derive both safety checks from the stored coefficients and schedule.
pub fn certify(result: &PlanResult, problem: &PlanningProblem) -> CertificationReport {
    let margin = problem.safety_radius();
    let mut violations = Vec::new();
    let mut min_coefficient = f64::INFINITY;
    let mut min_sampled_margin = f64::INFINITY;
    let n = result.position_bernstein.len();
    let m = problem.obstacles.len();
    let sched = &result.schedule;
    let schedule_ok = sched.n_knots() == n + 1 && sched.planes.iter().all(|r| r.len() == m);
    let stored_ok = result.collision_coefficients.len() == n && result.collision_coefficients.iter().all(|r| r.len() == m);
    for k in 0..n {
        let pos = result.position_poly(k);
        for (o, obs) in problem.obstacles.iter().enumerate() {
            if !schedule_ok || !stored_ok {
                violations.push(Violation {
                    check: CheckKind::Structure,
                    interval: k,
                    obstacle: o,
                    value: 0.0,
                });
                continue;
            }
            let (a, c) = (sched.get(k, o), sched.get(k + 1, o));
            // hyperplane validity: ‖w‖ ≤ 1 and every vertex on the far side
            let worst_plane = [a, c]
                .iter()
                .flat_map(|h| {
                    obs.vertices()
                        .iter()
                        .map(move |v| h.signed_distance(*v))
                        .chain(std::iter::once(h.w.norm() - 1.0))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if !(worst_plane <= COEFF_TOL) {
                violations.push(Violation {
                    check: CheckKind::Hyperplane,
                    interval: k,
                    obstacle: o,
                    value: worst_plane,
                });
            }
            let fresh = collision_polynomial(&pos, [a.w.x, a.w.y, a.b], [c.w.x, c.w.y, c.b], margin);
            let stored = result.collision_coefficients[k][o];
            let mut worst = f64::INFINITY;
            for (s, f) in stored.iter().zip(&fresh) {
                // a stored coefficient that disagrees with the recomputed one is untrusted
                let gap = (s - f).abs();
                let v = if gap <= COEFF_TOL * (1.0 + f.abs()) { s.min(*f) } else { s.min(*f).min(-gap) };
                worst = worst.min(v);
            }
            min_coefficient = min_coefficient.min(worst);
            if !(worst >= -COEFF_TOL) {
                violations.push(Violation {
                    check: CheckKind::Coefficient,
                    interval: k,
                    obstacle: o,
                    value: worst,
                });
            }
        }
        let mut worst: Vec<f64> = vec![f64::INFINITY; m];
        for i in 0..SAMPLES_PER_INTERVAL {
            let tau = i as f64 / (SAMPLES_PER_INTERVAL - 1) as f64;
            let p = pos.eval(tau).expect("τ in [0, 1]");
            let p = Vec2::new(p[0], p[1]);
            for (o, obs) in problem.obstacles.iter().enumerate() {
                worst[o] = worst[o].min(point_polytope_distance(p, obs) - margin);
            }
        }
        for (o, &w) in worst.iter().enumerate() {
            min_sampled_margin = min_sampled_margin.min(w);
            if !(w >= -SAMPLE_TOL) {
                violations.push(Violation {
                    check: CheckKind::Sampling,
                    interval: k,
                    obstacle: o,
                    value: w,
                });
            }
        }
    }
    let coefficients_pass = !violations.iter().any(|v| v.check != CheckKind::Sampling);
    let sampling_pass = !violations.iter().any(|v| v.check == CheckKind::Sampling);
    CertificationReport {
        coefficients_pass,
        sampling_pass,
        min_coefficient: min_coefficient.is_finite().then_some(min_coefficient),
        min_sampled_margin: min_sampled_margin.is_finite().then_some(min_sampled_margin),
        samples_per_interval: SAMPLES_PER_INTERVAL,
        violations,
    }
}

/// Apply the configuration's margin and horizon to `problem`.
pub fn configured_problem(problem: &PlanningProblem, config: &PlannerConfig) -> PlanningProblem {
    let mut p = problem.clone();
    p.eps = config.eps;
    p.n_intervals = config.n_intervals;
    p
}

/// Plan with the configured variant and certify the result.
pub fn plan(problem: &PlanningProblem, config: &PlannerConfig) -> Result<PlanResult, PlanError> {
    config.validate()?;
    let problem = configured_problem(problem, config);
    let nlp = build(&problem, config.variant)?;
    let init = initial_guess(&problem);
    let mut timings = init.timings;
    let mut trajectory = init.trajectory;
    let mut schedule = init.schedule;
    let mut branches = Vec::new();
    let mut audit = Vec::new();
    let mut merged: Option<sqp::SqpResult> = None;
    let mut restorations = 0;
    loop {
        let z0 = nlp.encode(&trajectory, &schedule);
        let sol = match config.variant {
            Variant::Coupled => sqp::solve(&nlp, &z0, &[], &config.sqp, None),
            Variant::Decoupled => {
                let p0 = nlp.freeze_hyperplanes(&schedule)?;
                let mut current = schedule.clone();
                let mut cb = |z: &[f64], params: &mut Vec<f64>| -> bool {
                    let traj = nlp.decode(z);
                    let out = update_hyperplanes(&traj, &current, &problem, config, &mut timings);
                    branches.push(out.branch);
                    if out.changes.is_empty() {
                        return false;
                    }
                    audit.extend(out.changes);
                    current = out.schedule;
                    *params = freeze_checked(&nlp, &current);
                    true
                };
                let cb: &mut IterationCallback<'_> = &mut cb;
                sqp::solve(&nlp, &z0, &p0, &config.sqp, Some(cb))
            }
        };
        let sol = append_solve(merged.take(), sol);
        if sol.trace.status != SqpStatus::LocallyInfeasible || restorations >= config.restorations {
            merged = Some(sol);
            break;
        }
        restorations += 1;
        trajectory = nlp.decode(&sol.z);
        schedule = seed_schedule(&trajectory, &problem, &mut timings).0;
        merged = Some(sol);
    }
    let sol = merged.expect("at least one solve");
    let mut result = assemble(&nlp, &problem, sol, timings, branches, audit);
    result.restorations = restorations;
    Ok(result)
}

/// Concatenate traces; the later solve supplies the iterate and status.
fn append_solve(prev: Option<sqp::SqpResult>, mut next: sqp::SqpResult) -> sqp::SqpResult {
    let Some(prev) = prev else { return next };
    let offset = prev.trace.iterations.last().map_or(0.0, |r| r.wall_time);
    let mut iterations = prev.trace.iterations;
    iterations.extend(next.trace.iterations.into_iter().map(|mut r| {
        r.wall_time += offset;
        r
    }));
    next.trace.iterations = iterations;
    next
}

fn freeze_checked(nlp: &TranscribedNlp, s: &HyperplaneSchedule) -> Vec<f64> {
    nlp.freeze_hyperplanes(s).expect("schedule matches layout")
}

fn assemble(
    nlp: &TranscribedNlp,
    problem: &PlanningProblem,
    sol: sqp::SqpResult,
    timings: SvmTimings,
    update_branches: Vec<UpdateBranch>,
    update_audit: Vec<UpdateRecord>,
) -> PlanResult {
    let traj = nlp.decode(&sol.z);
    let schedule = nlp.schedule_at(&sol.z, &sol.params);
    let polys = traj.interval_polynomials();
    let position_bernstein = polys.iter().map(|p| position_points(&p.position_bernstein())).collect();
    let collision_coefficients = nlp.collision_coefficients(&traj, &schedule);
    let mut result = PlanResult {
        status: PlanStatus::SolverFailure,
        variant: nlp.variant,
        t_final: traj.t_final,
        states: traj.states,
        controls: traj.controls,
        position_bernstein,
        collision_coefficients,
        schedule,
        trace: sol.trace,
        certification: CertificationReport {
            coefficients_pass: false,
            sampling_pass: false,
            min_coefficient: None,
            min_sampled_margin: None,
            samples_per_interval: SAMPLES_PER_INTERVAL,
            violations: Vec::new(),
        },
        timings: PlanTimings {
            wall_ms: 0.0,
            ls_ms: timings.ls * 1e3,
            qp_ms: timings.qp * 1e3,
        },
        n_vars: nlp.n_vars(),
        n_constraints: nlp.constraint_kinds().len(),
        update_branches,
        update_audit,
        restorations: 0,
    };
    result.certification = certify(&result, problem);
    result.status = match result.trace.status {
        SqpStatus::Converged if result.certification.passed() => PlanStatus::Success,
        SqpStatus::Converged => PlanStatus::CertificationFailure,
        SqpStatus::QpFailure | SqpStatus::LocallyInfeasible => PlanStatus::Infeasible,
        _ => PlanStatus::SolverFailure,
    };
    result
}

/// Plan and stamp the wall time around the whole call.
pub fn plan_timed(problem: &PlanningProblem, config: &PlannerConfig) -> Result<PlanResult, PlanError> {
    let clock = Instant::now();
    let mut r = plan(problem, config)?;
    r.timings.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn diag_problem(obstacles: Vec<ConvexPolytope>) -> PlanningProblem {
        PlanningProblem::in_arena(
            RobotState::new(0.0, 0.0, FRAC_PI_4),
            RobotState::new(10.0, 10.0, FRAC_PI_4),
            obstacles,
        )
    }

    #[test]
    fn initial_guess_empty_diagonal() {
        let g = initial_guess(&diag_problem(vec![]));
        for (k, s) in g.trajectory.states.iter().enumerate() {
            assert!((s.x - k as f64 * 0.5).abs() < 1e-12 && (s.y - s.x).abs() < 1e-12);
            assert!((s.theta - FRAC_PI_4).abs() < 1e-15);
        }
        let d = 200f64.sqrt();
        assert!((g.trajectory.t_final - 1.25 * d).abs() < 1e-12);
        assert!(g.trajectory.controls.iter().all(|u| (u.v - 0.8).abs() < 1e-12 && u.omega == 0.0));
    }

    #[test]
    fn initial_guess_dispatch_matches_collision_checks() {
        let sq = ConvexPolytope::rectangle(4.0, 4.0, 6.0, 6.0).unwrap();
        let pr = diag_problem(vec![sq.clone()]);
        let g = initial_guess(&pr);
        let mut n_ls = 0;
        for (k, s) in g.trajectory.states.iter().enumerate() {
            let inside = point_polytope_distance(Vec2::new(s.x, s.y), &sq) < pr.safety_radius();
            let expect = if inside { SvmMethod::Ls } else { SvmMethod::Qp };
            assert_eq!(g.methods[k][0], expect, "knot {k}");
            n_ls += inside as usize;
            for v in sq.vertices() {
                assert!(g.schedule.get(k, 0).signed_distance(*v) <= 1e-9);
            }
        }
        assert!(n_ls > 0);
    }

    #[test]
    fn update_noop_when_clear() {
        let sq = ConvexPolytope::rectangle(7.0, 1.0, 8.0, 2.0).unwrap();
        let pr = diag_problem(vec![sq]);
        let g = initial_guess(&pr);
        let mut t = SvmTimings::default();
        let out = update_hyperplanes(&g.trajectory, &g.schedule, &pr, &PlannerConfig::default(), &mut t);
        assert_eq!(out.branch, UpdateBranch::NoOp);
        assert_eq!(out.schedule, g.schedule);
    }

    #[test]
    fn update_branch_a_touches_only_flagged_pairs() {
        let a = ConvexPolytope::rectangle(4.5, 4.5, 5.5, 5.5).unwrap();
        let b = ConvexPolytope::rectangle(7.0, 1.0, 8.0, 2.0).unwrap();
        let pr = diag_problem(vec![a, b]);
        let g = initial_guess(&pr);
        let flagged = check_bounds(&g.trajectory, &pr.obstacles, pr.safety_radius());
        let brute: Vec<(usize, usize)> = (0..=20)
            .flat_map(|k| (0..2).map(move |o| (k, o)))
            .filter(|&(k, o)| {
                let s = g.trajectory.states[k];
                point_polytope_distance(Vec2::new(s.x, s.y), &pr.obstacles[o]) < pr.safety_radius() - COLLISION_FLAG_TOL
            })
            .collect();
        assert_eq!(flagged, brute);
        assert!(!flagged.is_empty());
        // rotate flagged normals slightly so the LS re-solve is a real change
        let mut sched = g.schedule.clone();
        for &(k, o) in &flagged {
            let h = sched.get(k, o);
            sched.set(k, o, Hyperplane::supporting(h.w.rotated(0.05), pr.obstacles[o].vertices()));
        }
        let mut t = SvmTimings::default();
        let out = update_hyperplanes(&g.trajectory, &sched, &pr, &PlannerConfig::default(), &mut t);
        assert_eq!(out.branch, UpdateBranch::Bounds);
        for k in 0..=20 {
            for o in 0..2 {
                if !flagged.contains(&(k, o)) {
                    assert_eq!(out.schedule.get(k, o), sched.get(k, o));
                }
            }
        }
        assert!(out.changes.iter().all(|c| c.angle <= c.limit && flagged.contains(&(c.knot, c.obstacle))));
        assert!(t.ls > 0.0);
    }

    #[test]
    fn update_branch_a_trust_region_keeps_old_normal() {
        let sq = ConvexPolytope::rectangle(4.5, 4.5, 5.5, 5.5).unwrap();
        let pr = diag_problem(vec![sq]);
        let g = initial_guess(&pr);
        let flagged = check_bounds(&g.trajectory, &pr.obstacles, pr.safety_radius());
        let mut sched = g.schedule.clone();
        for &(k, o) in &flagged {
            let h = sched.get(k, o);
            sched.set(k, o, Hyperplane::supporting(h.w.rotated(30f64.to_radians()), pr.obstacles[o].vertices()));
        }
        let mut t = SvmTimings::default();
        let out = update_hyperplanes(&g.trajectory, &sched, &pr, &PlannerConfig::default(), &mut t);
        for &(k, o) in &flagged {
            assert!((out.schedule.get(k, o).w - sched.get(k, o).w).norm() < 1e-12);
        }
    }

    #[test]
    fn certify_straight_line_with_clearance() {
        let sq = ConvexPolytope::rectangle(3.0, 6.0, 5.0, 8.0).unwrap();
        let pr = PlanningProblem::in_arena(RobotState::new(0.0, 5.0, 0.0), RobotState::new(10.0, 5.0, 0.0), vec![sq]);
        let nlp = build(&pr, Variant::Decoupled).unwrap();
        let g = initial_guess(&pr);
        let sol = sqp::SqpResult {
            z: nlp.encode(&g.trajectory, &g.schedule),
            params: nlp.freeze_hyperplanes(&g.schedule).unwrap(),
            lambda_eq: vec![],
            lambda_in: vec![],
            trace: SolveTrace {
                iterations: vec![],
                status: SqpStatus::Converged,
            },
        };
        let mut r = assemble(&nlp, &pr, sol, SvmTimings::default(), vec![], vec![]);
        assert!(r.certification.passed(), "{:?}", r.certification);
        assert!((r.certification.min_sampled_margin.unwrap() - 0.8).abs() < 1e-9);
        assert_eq!(r.status, PlanStatus::Success);
        r.collision_coefficients[7][0][2] = -0.5;
        let rep = certify(&r, &pr);
        assert!(!rep.coefficients_pass && rep.sampling_pass);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!((rep.violations[0].interval, rep.violations[0].obstacle), (7, 0));
    }

    #[test]
    fn plan_rejects_start_inside_obstacle() {
        let sq = ConvexPolytope::rectangle(-1.0, -1.0, 1.0, 1.0).unwrap();
        let e = plan(&diag_problem(vec![sq]), &PlannerConfig::default());
        assert!(matches!(e, Err(PlanError::Transcription(TranscriptionError::Rejected(_)))));
    }
}
