//! Robot–obstacle separating hyperplanes from a least-squares SVM (one
//! linear solve) or a hard-margin SVM (a three-variable QP), plus the vertex
//! offset and angular trust region applied to every update.
//!
//! The robot point carries label +1 and every obstacle vertex label −1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexPolytope, Vec2};
use crate::linalg::{solve_qp, solve_saddle, DenseQp, LinalgError, QpStatus, SparseRows};

/// Default LS-SVM regularisation weight.
pub const DEFAULT_TAU: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("robot point is not strictly separable from the obstacle; use the LS method")]
    InfeasibleSeparation,
    #[error("LS direction vanished (robot point at the obstacle centroid)")]
    DegenerateDirection,
    #[error("non-finite input")]
    NonFinite,
    #[error("QP did not converge")]
    QpFailure,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SvmMethod {
    Ls,
    Qp,
}

/// `wᵀy + b = 0` with unit `w` pointing toward the robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec2,
    pub b: f64,
}

impl Hyperplane {
    pub fn new(w: Vec2, b: f64) -> Self {
        Self { w, b }
    }

    /// Unit normal with the offset touching the obstacle's support vertex.
    pub fn supporting(w: Vec2, vertices: &[Vec2]) -> Self {
        let w = w.normalized();
        Self::new(w, vertex_offset(w, vertices))
    }

    pub fn signed_distance(&self, p: Vec2) -> f64 {
        self.w.dot(p) + self.b
    }
}

#[derive(Clone, Debug)]
pub struct SeparationProblem {
    pub robot_point: Vec2,
    pub vertices: Vec<Vec2>,
    pub method: SvmMethod,
    pub tau: f64,
}

impl SeparationProblem {
    pub fn new(robot_point: Vec2, obstacle: &ConvexPolytope, method: SvmMethod) -> Self {
        Self {
            robot_point,
            vertices: obstacle.vertices().to_vec(),
            method,
            tau: DEFAULT_TAU,
        }
    }

    /// Labels `[+1, −1, …, −1]`.
    pub fn labels(&self) -> Vec<f64> {
        let mut l = vec![-1.0; self.vertices.len() + 1];
        l[0] = 1.0;
        l
    }

    fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        std::iter::once(self.robot_point).chain(self.vertices.iter().copied())
    }
}

/// Raw classifier `(w, b)` as returned by the solve, and its unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmSolution {
    pub w_raw: Vec2,
    pub b_raw: f64,
    pub normal: Vec2,
}

impl SvmSolution {
    /// Geometric half-gap `1/‖w‖` of a hard-margin solution.
    pub fn margin(&self) -> f64 {
        1.0 / self.w_raw.norm()
    }
}

pub fn solve_svm(prob: &SeparationProblem) -> Result<SvmSolution, SvmError> {
    if !prob.robot_point.is_finite() || prob.vertices.iter().any(|v| !v.is_finite()) || prob.vertices.is_empty() {
        return Err(SvmError::NonFinite);
    }
    match prob.method {
        SvmMethod::Ls => solve_ls(prob),
        SvmMethod::Qp => solve_hard_margin(prob),
    }
}

fn solve_ls(prob: &SeparationProblem) -> Result<SvmSolution, SvmError> {
    let labels = prob.labels();
    let pts: Vec<Vec2> = prob.points().collect();
    let z = DMatrix::from_fn(pts.len(), 2, |i, j| labels[i] * if j == 0 { pts[i].x } else { pts[i].y });
    let sol = solve_saddle(&z, &labels, prob.tau)?;
    let w = z.transpose() * &sol.alpha;
    let w = Vec2::new(w[0], w[1]);
    if !(w.norm() >= 1e-12) {
        return Err(SvmError::DegenerateDirection);
    }
    Ok(SvmSolution {
        w_raw: w,
        b_raw: sol.b,
        normal: w.normalized(),
    })
}

fn solve_hard_margin(prob: &SeparationProblem) -> Result<SvmSolution, SvmError> {
    let labels = prob.labels();
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
    let mut qp = DenseQp::unconstrained(h, DVector::zeros(3));
    let mut c = SparseRows::new(3);
    for (p, &g) in prob.points().zip(&labels) {
        c.push(vec![(0, g * p.x), (1, g * p.y), (2, g)]);
    }
    qp.c_in = c;
    qp.d_in = vec![1.0; labels.len()];
    let sol = solve_qp(&qp)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(SvmError::InfeasibleSeparation),
        QpStatus::MaxIter => return Err(SvmError::QpFailure),
    }
    let w = Vec2::new(sol.z[0], sol.z[1]);
    if !(w.norm() > 0.0) || !w.is_finite() {
        return Err(SvmError::InfeasibleSeparation);
    }
    Ok(SvmSolution {
        w_raw: w,
        b_raw: sol.z[2],
        normal: w.normalized(),
    })
}

/// `b = −max_j wᵀv_j`.
pub fn vertex_offset(w: Vec2, vertices: &[Vec2]) -> f64 {
    -vertices.iter().map(|&v| w.dot(v)).fold(f64::NEG_INFINITY, f64::max)
}

/// Angle between two unit normals.
pub fn normal_angle(a: Vec2, b: Vec2) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Accept `w_new` iff it is within `max_angle` of `w_old`.
pub fn trust_region_filter(w_old: Vec2, w_new: Vec2, max_angle: f64) -> Vec2 {
    if normal_angle(w_old, w_new) <= max_angle {
        w_new
    } else {
        w_old
    }
}

/// Direction used when the LS normal vanishes: from the obstacle centroid to
/// the previous robot position, or `+x`.
pub fn fallback_direction(centroid: Vec2, previous: Option<Vec2>) -> Vec2 {
    previous
        .map(|p| p - centroid)
        .filter(|d| d.norm() >= 1e-12)
        .map(Vec2::normalized)
        .unwrap_or(Vec2::new(1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_polytope_distance;
    use proptest::prelude::*;

    fn unit_square() -> ConvexPolytope {
        ConvexPolytope::rectangle(-1.0, -1.0, 1.0, 1.0).unwrap()
    }

    fn qp_prob(robot: Vec2, vertices: Vec<Vec2>) -> SeparationProblem {
        SeparationProblem {
            robot_point: robot,
            vertices,
            method: SvmMethod::Qp,
            tau: DEFAULT_TAU,
        }
    }

    /// Half-gap of the best separator with normal angle `a`.
    fn sweep_margin(robot: Vec2, vertices: &[Vec2], a: f64) -> f64 {
        let n = Vec2::new(a.cos(), a.sin());
        (n.dot(robot) + vertex_offset(n, vertices)) / 2.0
    }

    #[test]
    fn qp_two_points() {
        let s = solve_svm(&qp_prob(Vec2::new(1.0, 0.0), vec![Vec2::new(-1.0, 0.0)])).unwrap();
        assert!((s.normal.x - 1.0).abs() < 1e-9 && s.normal.y.abs() < 1e-9);
    }

    #[test]
    fn qp_square_matches_sweep() {
        let sq = unit_square();
        let robot = Vec2::new(3.0, 0.0);
        let s = solve_svm(&SeparationProblem::new(robot, &sq, SvmMethod::Qp)).unwrap();
        assert!((s.normal.x - 1.0).abs() < 1e-9 && s.normal.y.abs() < 1e-9);
        let best = (0..62_832)
            .map(|i| sweep_margin(robot, sq.vertices(), i as f64 * 1e-4))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((s.margin() - best).abs() <= 1e-3 * best);
        assert!((s.margin() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn qp_rejects_inside_point() {
        let e = solve_svm(&SeparationProblem::new(Vec2::new(0.2, 0.1), &unit_square(), SvmMethod::Qp));
        assert_eq!(e.unwrap_err(), SvmError::InfeasibleSeparation);
    }

    #[test]
    fn ls_inside_point_is_finite() {
        let sq = unit_square();
        let s = solve_svm(&SeparationProblem::new(Vec2::new(0.3, 0.1), &sq, SvmMethod::Ls)).unwrap();
        assert!(s.normal.is_finite());
        assert!((s.normal.norm() - 1.0).abs() < 1e-12);
        // independent oracle: LU solve of the block system
        let pts = [Vec2::new(0.3, 0.1), sq.vertices()[0], sq.vertices()[1], sq.vertices()[2], sq.vertices()[3]];
        let labels = [1.0, -1.0, -1.0, -1.0, -1.0];
        let mut k = DMatrix::zeros(6, 6);
        for i in 0..5 {
            k[(0, i + 1)] = -labels[i];
            k[(i + 1, 0)] = labels[i];
            for j in 0..5 {
                k[(i + 1, j + 1)] = labels[i] * labels[j] * pts[i].dot(pts[j]);
            }
            k[(i + 1, i + 1)] += 1.0 / DEFAULT_TAU;
        }
        let mut rhs = DVector::from_element(6, 1.0);
        rhs[0] = 0.0;
        let x = k.lu().solve(&rhs).unwrap();
        let mut w = Vec2::default();
        for i in 0..5 {
            w = w + pts[i] * (labels[i] * x[i + 1]);
        }
        assert!((w.normalized() - s.normal).norm() < 1e-8);
    }

    #[test]
    fn ls_centroid_is_degenerate() {
        let e = solve_svm(&SeparationProblem::new(Vec2::new(0.0, 0.0), &unit_square(), SvmMethod::Ls));
        assert_eq!(e.unwrap_err(), SvmError::DegenerateDirection);
        assert_eq!(fallback_direction(Vec2::new(0.0, 0.0), None), Vec2::new(1.0, 0.0));
        let d = fallback_direction(Vec2::new(0.0, 0.0), Some(Vec2::new(0.0, -2.0)));
        assert_eq!(d, Vec2::new(0.0, -1.0));
    }

    #[test]
    fn vertex_offset_examples() {
        assert_eq!(vertex_offset(Vec2::new(1.0, 0.0), unit_square().vertices()), -1.0);
        let sq2 = ConvexPolytope::rectangle(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(vertex_offset(Vec2::new(0.0, 1.0), sq2.vertices()), -2.0);
    }

    #[test]
    fn trust_region_examples() {
        let e = Vec2::new(1.0, 0.0);
        assert_eq!(trust_region_filter(e, Vec2::new(0.0, 1.0), 10f64.to_radians()), e);
        let r5 = Vec2::new(5f64.to_radians().cos(), 5f64.to_radians().sin());
        assert_eq!(trust_region_filter(e, r5, 10f64.to_radians()), r5);
    }

    fn arb_poly() -> impl Strategy<Value = ConvexPolytope> {
        (0.2..2.0f64, 0.2..2.0f64, -3.0..3.0f64, -3.0..3.0f64, 0.0..6.3f64)
            .prop_map(|(w, h, cx, cy, a)| {
                ConvexPolytope::rectangle(-w / 2.0, -h / 2.0, w / 2.0, h / 2.0)
                    .unwrap()
                    .rotated(a)
                    .translated(Vec2::new(cx, cy))
            })
    }

    proptest! {
        #[test]
        fn vertex_offset_supports(a in 0.0..6.3f64, poly in arb_poly()) {
            let w = Vec2::new(a.cos(), a.sin());
            let b = vertex_offset(w, poly.vertices());
            let vals: Vec<f64> = poly.vertices().iter().map(|&v| w.dot(v) + b).collect();
            prop_assert!(vals.iter().all(|&v| v <= 1e-12));
            prop_assert!(vals.iter().any(|&v| v == 0.0));
        }

        #[test]
        fn separation_is_sound(
            p in (-6.0..6.0f64, -6.0..6.0f64),
            poly in arb_poly(),
            m in 0.0..0.5f64,
            ls in any::<bool>(),
        ) {
            let robot = Vec2::new(p.0, p.1);
            let method = if ls { SvmMethod::Ls } else { SvmMethod::Qp };
            if let Ok(s) = solve_svm(&SeparationProblem::new(robot, &poly, method)) {
                let hp = Hyperplane::supporting(s.normal, poly.vertices());
                if hp.signed_distance(robot) >= m {
                    prop_assert!(point_polytope_distance(robot, &poly) >= m - 1e-12);
                }
            }
        }

        #[test]
        fn qp_scale_invariant(p in (2.5..6.0f64, -3.0..3.0f64), poly in arb_poly(), c in 0.1..10.0f64) {
            let robot = Vec2::new(p.0 + 3.0, p.1);
            let base = solve_svm(&SeparationProblem::new(robot, &poly, SvmMethod::Qp));
            prop_assume!(base.is_ok());
            let scaled: Vec<Vec2> = poly.vertices().iter().map(|&v| v * c).collect();
            let s = solve_svm(&qp_prob(robot * c, scaled)).unwrap();
            prop_assert!((s.normal - base.unwrap().normal).norm() <= 1e-6);
        }

        #[test]
        fn trust_region_returns_an_input(a in 0.0..6.3f64, b in 0.0..6.3f64, t in 0.01..1.5f64) {
            let (u, v) = (Vec2::new(a.cos(), a.sin()), Vec2::new(b.cos(), b.sin()));
            let r = trust_region_filter(u, v, t);
            prop_assert!(r == u || r == v);
        }
    }
}
