//! Planar convex geometry: obstacles, the robot footprint and the distance
//! queries the planner uses for collision flags and certification.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance shared by every geometric predicate (metres).
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polytope needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertices {0} and {1} coincide")]
    DuplicateVertex(usize, usize),
    #[error("vertex {0} is not a strict counter-clockwise convex turn")]
    NotConvex(usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid circle radius {0}")]
    BadRadius(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        self * (1.0 / self.norm())
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Robot footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Vec2, radius: f64) -> Result<Self, GeometryError> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(GeometryError::BadRadius(radius));
        }
        if !center.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { center, radius })
    }
}

/// Strictly convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexPolytope {
    vertices: Vec<Vec2>,
}

#[derive(Deserialize)]
struct RawPolytope {
    vertices: Vec<Vec2>,
}

impl<'de> Deserialize<'de> for ConvexPolytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawPolytope::deserialize(d)?;
        ConvexPolytope::new(raw.vertices).map_err(serde::de::Error::custom)
    }
}

impl ConvexPolytope {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        for i in 0..n {
            for j in i + 1..n {
                if (vertices[i] - vertices[j]).norm() <= GEOM_TOL {
                    return Err(GeometryError::DuplicateVertex(i, j));
                }
            }
        }
        let mut turning = 0.0;
        for i in 0..n {
            let e0 = vertices[(i + 1) % n] - vertices[i];
            let e1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
            if e0.cross(e1) <= 0.0 {
                return Err(GeometryError::NotConvex((i + 1) % n));
            }
            turning += e0.cross(e1).atan2(e0.dot(e1));
        }
        // all left turns but wound more than once
        if (turning - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(GeometryError::NotConvex(0));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
            Vec2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn centroid(&self) -> Vec2 {
        let s = self
            .vertices
            .iter()
            .fold(Vec2::default(), |acc, &v| acc + v);
        s * (1.0 / self.vertices.len() as f64)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Half-plane membership test, boundary included.
    pub fn contains(&self, p: Vec2) -> bool {
        self.edges().all(|(a, b)| {
            let e = b - a;
            e.cross(p - a) >= -GEOM_TOL * e.norm()
        })
    }

    pub fn translated(&self, t: Vec2) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + t).collect(),
        }
    }

    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v.rotated(angle)).collect(),
        }
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    (p - (a + e * t)).norm()
}

/// Euclidean distance from `p` to the polytope; zero inside or on the boundary.
pub fn point_polytope_distance(p: Vec2, poly: &ConvexPolytope) -> f64 {
    if poly.contains(p) {
        return 0.0;
    }
    poly.edges()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Result of [`convex_hull`]; collinear or coincident inputs collapse.
#[derive(Clone, Debug, PartialEq)]
pub enum Hull {
    Point(Vec2),
    Segment(Vec2, Vec2),
    Polygon(ConvexPolytope),
}

impl Hull {
    pub fn vertices(&self) -> Vec<Vec2> {
        match self {
            Hull::Point(p) => vec![*p],
            Hull::Segment(a, b) => vec![*a, *b],
            Hull::Polygon(p) => p.vertices().to_vec(),
        }
    }
}

/// Andrew's monotone chain. Points closer than [`GEOM_TOL`] are merged and
/// collinear boundary points dropped.
pub fn convex_hull(points: &[Vec2]) -> Hull {
    assert!(!points.is_empty(), "convex_hull needs at least one point");
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() <= GEOM_TOL);

    let turn = |o: Vec2, a: Vec2, b: Vec2| (a - o).cross(b - o);
    let scale = pts
        .iter()
        .fold(1.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let tol = GEOM_TOL * scale;

    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= tol {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= tol {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);

    match lower.len() {
        0 => Hull::Point(pts[0]),
        1 => Hull::Point(lower[0]),
        2 => Hull::Segment(lower[0], lower[1]),
        _ => match ConvexPolytope::new(lower.clone()) {
            Ok(p) => Hull::Polygon(p),
            // nearly collinear: keep the two extreme points
            Err(_) => Hull::Segment(pts[0], pts[pts.len() - 1]),
        },
    }
}

fn hull_edges(v: &[Vec2]) -> Vec<(Vec2, Vec2)> {
    match v.len() {
        0 | 1 => Vec::new(),
        2 => vec![(v[0], v[1])],
        n => (0..n).map(|i| (v[i], v[(i + 1) % n])).collect(),
    }
}

/// Separating-axis overlap test for two convex vertex sets given as hull
/// vertex lists (a point, a segment or a CCW polygon).
fn convex_sets_overlap(a: &[Vec2], b: &[Vec2]) -> bool {
    let project = |v: &[Vec2], axis: Vec2| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = p.dot(axis);
            (lo.min(d), hi.max(d))
        })
    };
    let mut axes: Vec<Vec2> = hull_edges(a)
        .into_iter()
        .chain(hull_edges(b))
        .map(|(p, q)| (q - p).perp())
        .collect();
    if axes.is_empty() {
        // point vs point
        return (a[0] - b[0]).norm() <= GEOM_TOL;
    }
    if a.is_empty() || b.is_empty() {
        return false;
    }
    // a point against a segment has only one axis; add the segment direction
    if a.len() + b.len() == 3 {
        let (p, q) = if a.len() == 2 { (a[0], a[1]) } else { (b[0], b[1]) };
        axes.push(q - p);
    }
    for axis in axes {
        let n = axis.norm();
        if n <= 0.0 {
            continue;
        }
        let axis = axis * (1.0 / n);
        let (alo, ahi) = project(a, axis);
        let (blo, bhi) = project(b, axis);
        if ahi < blo - GEOM_TOL || bhi < alo - GEOM_TOL {
            return false;
        }
    }
    true
}

/// Distance between two convex vertex sets (hull vertex lists); zero when
/// they overlap.
pub fn convex_sets_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    if convex_sets_overlap(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in hull_edges(b) {
        for &v in a {
            best = best.min(point_segment_distance(v, p, q));
        }
    }
    for (p, q) in hull_edges(a) {
        for &v in b {
            best = best.min(point_segment_distance(v, p, q));
        }
    }
    if best.is_infinite() {
        best = (a[0] - b[0]).norm();
    }
    best
}

/// Distance between the convex hull of `points` and `poly` (zero if they
/// intersect).
pub fn hull_polytope_clearance(points: &[Vec2], poly: &ConvexPolytope) -> f64 {
    let hull = convex_hull(points);
    convex_sets_distance(&hull.vertices(), poly.vertices())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> ConvexPolytope {
        ConvexPolytope::rectangle(-1.0, -1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn polytope_validation() {
        assert_eq!(
            ConvexPolytope::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]),
            Err(GeometryError::TooFewVertices(2))
        );
        let cw = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
        assert!(matches!(ConvexPolytope::new(cw), Err(GeometryError::NotConvex(_))));
        let dup = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1e-12),
            Vec2::new(0.0, 1.0),
        ];
        assert!(matches!(ConvexPolytope::new(dup), Err(GeometryError::DuplicateVertex(1, 2))));
        // pentagram: every turn is to the left but it winds twice
        let star: Vec<Vec2> = (0..5)
            .map(|i| Vec2::new(1.0, 0.0).rotated(i as f64 * 4.0 * std::f64::consts::PI / 5.0))
            .collect();
        assert!(ConvexPolytope::new(star).is_err());
        assert!(Circle::new(Vec2::default(), -1.0).is_err());
    }

    #[test]
    fn point_distance_examples() {
        let sq = unit_square();
        assert_eq!(point_polytope_distance(Vec2::new(3.0, 0.0), &sq), 2.0);
        assert_eq!(point_polytope_distance(Vec2::new(0.0, 0.0), &sq), 0.0);
        let d = point_polytope_distance(Vec2::new(2.0, 2.0), &sq);
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_polytope_distance(Vec2::new(1.0, 0.3), &sq), 0.0);
    }

    #[test]
    fn hull_clearance_examples() {
        let sq = unit_square();
        let c = hull_polytope_clearance(&[Vec2::new(3.0, 0.0), Vec2::new(4.0, 0.0)], &sq);
        assert!((c - 2.0).abs() < 1e-15);
        let c = hull_polytope_clearance(&[Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)], &sq);
        assert_eq!(c, 0.0);
        // segment crossing the square without a vertex inside it
        let c = hull_polytope_clearance(&[Vec2::new(-3.0, 0.5), Vec2::new(3.0, 0.5)], &sq);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn hull_clearance_diagonal_matches_dense_sampling() {
        let sq = unit_square();
        let pts = [Vec2::new(2.0, 2.0), Vec2::new(3.0, 3.0)];
        // oracle: min distance over dense samples of the segment and the square boundary
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            let p = pts[0] + (pts[1] - pts[0]) * (i as f64 / 400.0);
            for (a, b) in sq.edges() {
                for j in 0..=400 {
                    let q = a + (b - a) * (j as f64 / 400.0);
                    best = best.min((p - q).norm());
                }
            }
        }
        assert!((best - 2.0_f64.sqrt()).abs() < 1e-12);
        let c = hull_polytope_clearance(&pts, &sq);
        assert!((c - best).abs() < 1e-12);
    }

    #[test]
    fn hull_examples() {
        let h = convex_hull(&[
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.2, 0.2),
        ]);
        match h {
            Hull::Polygon(p) => assert_eq!(
                p.vertices(),
                &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]
            ),
            other => panic!("expected triangle, got {other:?}"),
        }
        assert_eq!(convex_hull(&[Vec2::new(0.0, 0.0)]), Hull::Point(Vec2::new(0.0, 0.0)));
        let seg = convex_hull(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)]);
        assert_eq!(seg, Hull::Segment(Vec2::new(0.0, 0.0), Vec2::new(2.0, 2.0)));
    }

    /// O(n³) oracle: a point is a hull vertex iff some line through it and
    /// another point has every point on one side, and it is extreme on that line.
    fn brute_force_hull_vertices(pts: &[Vec2]) -> Vec<Vec2> {
        let n = pts.len();
        let mut out = Vec::new();
        for i in 0..n {
            let mut is_vertex = false;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let e = pts[j] - pts[i];
                let side: Vec<f64> = pts.iter().map(|&p| e.cross(p - pts[i])).collect();
                let all_left = side.iter().all(|&s| s >= -1e-12);
                let collinear_beyond = pts
                    .iter()
                    .zip(&side)
                    .any(|(&p, &s)| s.abs() <= 1e-12 && (p - pts[i]).dot(e) < -1e-12);
                if all_left && !collinear_beyond {
                    is_vertex = true;
                    break;
                }
            }
            if is_vertex {
                out.push(pts[i]);
            }
        }
        out
    }

    #[test]
    fn hull_of_disc_points_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec2> = (0..100)
            .map(|_| {
                let r = rng.gen::<f64>().sqrt();
                let a = rng.gen::<f64>() * std::f64::consts::TAU;
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let Hull::Polygon(h) = convex_hull(&pts) else {
            panic!("degenerate hull")
        };
        let mut expect = brute_force_hull_vertices(&pts);
        let mut got = h.vertices().to_vec();
        let key = |a: &Vec2, b: &Vec2| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y));
        expect.sort_by(key);
        got.sort_by(key);
        assert_eq!(got, expect);
        for &p in &pts {
            assert!(h.contains(p));
        }
    }

    fn arb_point() -> impl Strategy<Value = Vec2> {
        (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    fn arb_polytope() -> impl Strategy<Value = ConvexPolytope> {
        prop::collection::vec(arb_point(), 3..12).prop_filter_map("degenerate", |pts| {
            match convex_hull(&pts) {
                Hull::Polygon(p) => Some(p),
                _ => None,
            }
        })
    }

    proptest! {
        #[test]
        fn zero_distance_iff_inside(p in arb_point(), poly in arb_polytope()) {
            let d = point_polytope_distance(p, &poly);
            prop_assert_eq!(d == 0.0, poly.contains(p));
        }

        #[test]
        fn clearance_symmetric(a in arb_polytope(), b in arb_polytope()) {
            let ab = hull_polytope_clearance(a.vertices(), &b);
            let ba = hull_polytope_clearance(b.vertices(), &a);
            prop_assert!((ab - ba).abs() <= 1e-9);
        }

        #[test]
        fn clearance_below_pointwise_min(
            pts in prop::collection::vec(arb_point(), 1..8),
            poly in arb_polytope(),
        ) {
            let c = hull_polytope_clearance(&pts, &poly);
            let m = pts.iter().map(|&p| point_polytope_distance(p, &poly)).fold(f64::INFINITY, f64::min);
            prop_assert!(c <= m + 1e-12);
        }

        #[test]
        fn distances_rigid_invariant(
            p in arb_point(),
            pts in prop::collection::vec(arb_point(), 1..6),
            poly in arb_polytope(),
            angle in -3.2..3.2f64,
            t in arb_point(),
        ) {
            let moved = poly.rotated(angle).translated(t);
            let mv = |q: Vec2| q.rotated(angle) + t;
            let d0 = point_polytope_distance(p, &poly);
            let d1 = point_polytope_distance(mv(p), &moved);
            prop_assert!((d0 - d1).abs() <= 1e-9);
            let moved_pts: Vec<Vec2> = pts.iter().map(|&q| mv(q)).collect();
            let c0 = hull_polytope_clearance(&pts, &poly);
            let c1 = hull_polytope_clearance(&moved_pts, &moved);
            prop_assert!((c0 - c1).abs() <= 1e-9);
        }
    }
}
