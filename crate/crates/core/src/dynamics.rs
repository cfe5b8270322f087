//! Unicycle model, classical RK4 over one zero-order-hold control interval,
//! and the cubic continuous extension that parameterises the state between
//! knots.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::bernstein::{monomial_to_bernstein, BernsteinPoly, MonomialPoly};

pub const STATE_DIM: usize = 3;
pub const CONTROL_DIM: usize = 2;
/// Degree of the per-interval state polynomial.
pub const DENSE_DEGREE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// `ẋ = [v cos θ, v sin θ, ω]`.
pub fn unicycle<S: Scalar>(x: &[S; 3], u: &[S; 2]) -> [S; 3] {
    [u[0] * x[2].cos(), u[0] * x[2].sin(), u[1]]
}

pub fn f(state: RobotState, u: ControlInput) -> [f64; 3] {
    unicycle(&state.to_array(), &[u.v, u.omega])
}

/// The four stage derivatives of one RK4 step.
pub type Stages<S> = [[S; 3]; 4];

fn axpy<S: Scalar>(x: &[S; 3], a: S, k: &[S; 3]) -> [S; 3] {
    [x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2]]
}

/// Classical RK4 step with constant control; returns the end state and stages.
pub fn rk4<S: Scalar>(x: &[S; 3], u: &[S; 2], h: S) -> ([S; 3], Stages<S>) {
    let half = h * 0.5;
    let k1 = unicycle(x, u);
    let k2 = unicycle(&axpy(x, half, &k1), u);
    let k3 = unicycle(&axpy(x, half, &k2), u);
    let k4 = unicycle(&axpy(x, h, &k3), u);
    let sixth = h * (1.0 / 6.0);
    let mut end = *x;
    for i in 0..3 {
        end[i] += sixth * (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]);
    }
    (end, [k1, k2, k3, k4])
}

pub fn rk4_step(state: RobotState, u: ControlInput, h: f64) -> (RobotState, Stages<f64>) {
    assert!(h > 0.0, "step length must be positive");
    let (end, k) = rk4(&state.to_array(), &[u.v, u.omega], h);
    (RobotState::from_array(end), k)
}

/// Monomial coefficients `[c₀, c₁, c₂, c₃]` (each a state vector) of the
/// third-order continuous extension of RK4 in `τ = (t − t_k)/h`.
pub fn dense_coeffs<S: Scalar>(x: &[S; 3], k: &Stages<S>, h: S) -> [[S; 3]; 4] {
    let [k1, k2, k3, k4] = k;
    let mut c = [[S::zero(); 3]; 4];
    for i in 0..3 {
        c[0][i] = x[i];
        c[1][i] = h * k1[i];
        c[2][i] = h * (k1[i] * -3.0 + k2[i] * 2.0 + k3[i] * 2.0 - k4[i]) * 0.5;
        c[3][i] = h * (k1[i] * 2.0 - k2[i] * 2.0 - k3[i] * 2.0 + k4[i] * 2.0) * (1.0 / 3.0);
    }
    c
}

/// Per-interval cubic state polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalPolynomial {
    pub monomial: MonomialPoly<f64>,
}

impl IntervalPolynomial {
    pub fn eval(&self, tau: f64) -> RobotState {
        let v = self.monomial.eval(tau);
        RobotState::new(v[0], v[1], v[2])
    }

    pub fn to_bernstein(&self) -> BernsteinPoly<f64> {
        monomial_to_bernstein(&self.monomial)
    }

    /// Bernstein control points of the position `(x, y)` only.
    pub fn position_bernstein(&self) -> BernsteinPoly<f64> {
        position_bernstein(&self.monomial)
    }

    pub fn monomial_coeff(&self, j: usize) -> [f64; 3] {
        let c = self.monomial.coeff(j);
        [c[0], c[1], c[2]]
    }
}

/// Drop the heading from a state polynomial and convert to Bernstein form.
pub fn position_bernstein<S: Scalar>(m: &MonomialPoly<S>) -> BernsteinPoly<S> {
    let pos: Vec<S> = (0..=m.degree()).flat_map(|j| [m.coeff(j)[0], m.coeff(j)[1]]).collect();
    let pm = MonomialPoly::from_flat(m.degree(), 2, pos).expect("finite coefficients");
    monomial_to_bernstein(&pm)
}

pub fn dense_output(state: RobotState, stages: &Stages<f64>, h: f64) -> IntervalPolynomial {
    let c = dense_coeffs(&state.to_array(), stages, h);
    let flat: Vec<f64> = c.iter().flatten().copied().collect();
    IntervalPolynomial {
        monomial: MonomialPoly::from_flat(DENSE_DEGREE, STATE_DIM, flat)
            .expect("finite dense-output coefficients"),
    }
}
