//! Forward-mode second-order automatic differentiation.
//!
//! The transcription evaluates every per-interval quantity (RK4 step, dense
//! output, Bernstein collision coefficients) through the [`Scalar`] trait, so
//! the same code yields plain values (`f64`) or values with exact gradients
//! and Hessians ([`Jet`]).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Minimal real-number interface shared by `f64` and [`Jet`].
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn val(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Value, gradient and Hessian with respect to `K` seed variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const K: usize> {
    pub v: f64,
    pub g: [f64; K],
    pub h: [[f64; K]; K],
}

impl<const K: usize> Jet<K> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; K],
            h: [[0.0; K]; K],
        }
    }

    /// Seed variable `i` with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Re-express this jet in a larger variable set; `slots[i]` is the index
    /// in the target set of local variable `i`.
    pub fn lift<const L: usize>(&self, slots: &[usize; K]) -> Jet<L> {
        let mut out = Jet::<L>::constant(self.v);
        for i in 0..K {
            out.g[slots[i]] = self.g[i];
            for j in 0..K {
                out.h[slots[i]][slots[j]] = self.h[i][j];
            }
        }
        out
    }

    /// Apply a scalar function given its value, first and second derivative
    /// at `self.v`.
    #[inline]
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..K {
            out.g[i] = f1 * self.g[i];
        }
        for i in 0..K {
            for j in 0..K {
                out.h[i][j] = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const K: usize> Add for Jet<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl<const K: usize> AddAssign for Jet<K> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.v += o.v;
        for i in 0..K {
            self.g[i] += o.g[i];
            for j in 0..K {
                self.h[i][j] += o.h[i][j];
            }
        }
    }
}

impl<const K: usize> Sub for Jet<K> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const K: usize> Neg for Jet<K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const K: usize> Mul for Jet<K> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for i in 0..K {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..K {
            for j in 0..K {
                out.h[i][j] = self.v * o.h[i][j]
                    + o.v * self.h[i][j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const K: usize> Add<f64> for Jet<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
}

impl<const K: usize> Sub<f64> for Jet<K> {
    type Output = Self;
    #[inline]
    fn sub(mut self, c: f64) -> Self {
        self.v -= c;
        self
    }
}

impl<const K: usize> Mul<f64> for Jet<K> {
    type Output = Self;
    #[inline]
    fn mul(mut self, c: f64) -> Self {
        self.v *= c;
        for i in 0..K {
            self.g[i] *= c;
            for j in 0..K {
                self.h[i][j] *= c;
            }
        }
        self
    }
}

impl<const K: usize> Scalar for Jet<K> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
}
