//! Bernstein-basis polynomial algebra on `τ ∈ [0, 1]`.
//!
//! All routines are generic over [`Scalar`] so the transcription can push
//! automatic-differentiation jets through the same conversions, products
//! and degree elevations it certifies with plain floats.

use thiserror::Error;

use crate::ad::Scalar;

/// Largest degree with precomputed binomial coefficients.
pub const MAX_DEGREE: usize = 12;

const fn binomial_table() -> [[u64; MAX_DEGREE + 1]; MAX_DEGREE + 1] {
    let mut t = [[0u64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
    let mut n = 0;
    while n <= MAX_DEGREE {
        t[n][0] = 1;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
            k += 1;
        }
        n += 1;
    }
    t
}

const BINOMIAL: [[u64; MAX_DEGREE + 1]; MAX_DEGREE + 1] = binomial_table();

/// Exact `C(n, k)` for `n ≤ MAX_DEGREE`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        0
    } else {
        BINOMIAL[n][k]
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BernsteinError {
    #[error("τ = {0} outside [0, 1]")]
    Domain(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("target degree {target} below current degree {current}")]
    DegreeBelowCurrent { current: usize, target: usize },
    #[error("degree {0} exceeds supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("expected {expected} coefficients, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("operation needs a scalar polynomial, got dimension {0}")]
    NotScalar(usize),
}

fn check_coeffs<T: Scalar>(degree: usize, dim: usize, coeffs: &[T]) -> Result<(), BernsteinError> {
    if degree > MAX_DEGREE {
        return Err(BernsteinError::DegreeTooHigh(degree));
    }
    if dim == 0 {
        return Err(BernsteinError::DimMismatch(0, 1));
    }
    if coeffs.len() != (degree + 1) * dim {
        return Err(BernsteinError::Length {
            expected: (degree + 1) * dim,
            got: coeffs.len(),
        });
    }
    if coeffs.iter().any(|c| !c.val().is_finite()) {
        return Err(BernsteinError::NonFinite);
    }
    Ok(())
}

/// Vector-valued polynomial `Σ βᵢ Bᵢˢ(τ)`; coefficients stored flat,
/// `dim` entries per coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct BernsteinPoly<T = f64> {
    degree: usize,
    dim: usize,
    coeffs: Vec<T>,
}

/// Vector-valued polynomial `Σ bⱼ τʲ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialPoly<T = f64> {
    degree: usize,
    dim: usize,
    coeffs: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductMode {
    /// Both operands have dimension `d`; result is scalar.
    Dot,
    /// Left operand is scalar; result keeps the right operand's dimension.
    Scale,
}

impl<T: Scalar> MonomialPoly<T> {
    pub fn from_flat(degree: usize, dim: usize, coeffs: Vec<T>) -> Result<Self, BernsteinError> {
        check_coeffs(degree, dim, &coeffs)?;
        Ok(Self { degree, dim, coeffs })
    }

    pub fn from_coeffs(coeffs: Vec<Vec<T>>) -> Result<Self, BernsteinError> {
        let (degree, dim, flat) = flatten(coeffs)?;
        Self::from_flat(degree, dim, flat)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeff(&self, j: usize) -> &[T] {
        &self.coeffs[j * self.dim..(j + 1) * self.dim]
    }

    /// Horner evaluation; only used as an oracle for the Bernstein form.
    pub fn eval(&self, tau: f64) -> Vec<T> {
        let mut out: Vec<T> = self.coeff(self.degree).to_vec();
        for j in (0..self.degree).rev() {
            for (o, &c) in out.iter_mut().zip(self.coeff(j)) {
                *o = *o * tau + c;
            }
        }
        out
    }
}

fn flatten<T: Scalar>(coeffs: Vec<Vec<T>>) -> Result<(usize, usize, Vec<T>), BernsteinError> {
    if coeffs.is_empty() {
        return Err(BernsteinError::Length { expected: 1, got: 0 });
    }
    let dim = coeffs[0].len();
    if let Some(bad) = coeffs.iter().find(|c| c.len() != dim) {
        return Err(BernsteinError::DimMismatch(dim, bad.len()));
    }
    let degree = coeffs.len() - 1;
    Ok((degree, dim, coeffs.into_iter().flatten().collect()))
}

impl<T: Scalar> BernsteinPoly<T> {
    pub fn from_flat(degree: usize, dim: usize, coeffs: Vec<T>) -> Result<Self, BernsteinError> {
        check_coeffs(degree, dim, &coeffs)?;
        Ok(Self { degree, dim, coeffs })
    }

    pub fn from_coeffs(coeffs: Vec<Vec<T>>) -> Result<Self, BernsteinError> {
        let (degree, dim, flat) = flatten(coeffs)?;
        Self::from_flat(degree, dim, flat)
    }

    /// Scalar polynomial from its coefficient list.
    pub fn scalar(coeffs: Vec<T>) -> Result<Self, BernsteinError> {
        if coeffs.is_empty() {
            return Err(BernsteinError::Length { expected: 1, got: 0 });
        }
        Self::from_flat(coeffs.len() - 1, 1, coeffs)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeff(&self, i: usize) -> &[T] {
        &self.coeffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[T] {
        &self.coeffs
    }

    pub fn into_flat(self) -> Vec<T> {
        self.coeffs
    }

    /// de Casteljau evaluation.
    pub fn eval(&self, tau: f64) -> Result<Vec<T>, BernsteinError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(BernsteinError::Domain(tau));
        }
        let d = self.dim;
        let mut work = self.coeffs.clone();
        for r in 1..=self.degree {
            for i in 0..=(self.degree - r) {
                for k in 0..d {
                    work[i * d + k] = work[i * d + k] * (1.0 - tau) + work[(i + 1) * d + k] * tau;
                }
            }
        }
        work.truncate(d);
        Ok(work)
    }

    /// Same polynomial expressed in the degree-`target` basis.
    pub fn elevate(&self, target: usize) -> Result<Self, BernsteinError> {
        if target < self.degree {
            return Err(BernsteinError::DegreeBelowCurrent {
                current: self.degree,
                target,
            });
        }
        if target > MAX_DEGREE {
            return Err(BernsteinError::DegreeTooHigh(target));
        }
        let d = self.dim;
        let mut cur = self.coeffs.clone();
        for s in self.degree..target {
            // degree s -> s + 1
            let mut next = Vec::with_capacity((s + 2) * d);
            for i in 0..=s + 1 {
                let a = i as f64 / (s + 1) as f64;
                for k in 0..d {
                    let lo = if i > 0 { cur[(i - 1) * d + k] * a } else { T::zero() };
                    let hi = if i <= s { cur[i * d + k] * (1.0 - a) } else { T::zero() };
                    next.push(lo + hi);
                }
            }
            cur = next;
        }
        Ok(Self {
            degree: target,
            dim: d,
            coeffs: cur,
        })
    }

    /// Coefficient-wise sum; degrees are aligned by elevation.
    pub fn add(&self, other: &Self) -> Result<Self, BernsteinError> {
        if self.dim != other.dim {
            return Err(BernsteinError::DimMismatch(self.dim, other.dim));
        }
        let deg = self.degree.max(other.degree);
        let a = self.elevate(deg)?;
        let b = other.elevate(deg)?;
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(&x, &y)| x + y).collect();
        Ok(Self {
            degree: deg,
            dim: self.dim,
            coeffs,
        })
    }

    /// Add a constant to every scalar coefficient (shifts the function).
    pub fn offset(&self, c: f64) -> Self {
        Self {
            degree: self.degree,
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|&x| x + c).collect(),
        }
    }
}

impl BernsteinPoly<f64> {
    fn scalar_values(&self) -> Result<&[f64], BernsteinError> {
        if self.dim != 1 {
            return Err(BernsteinError::NotScalar(self.dim));
        }
        Ok(&self.coeffs)
    }

    /// Smallest coefficient: a lower bound of the polynomial on `[0, 1]`.
    pub fn coeff_min(&self) -> Result<f64, BernsteinError> {
        Ok(self.scalar_values()?.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn coeff_max(&self) -> Result<f64, BernsteinError> {
        Ok(self
            .scalar_values()?
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// `βᵢ = Σ_{j≤i} C(i,j)/C(s,j) · bⱼ`.
pub fn monomial_to_bernstein<T: Scalar>(m: &MonomialPoly<T>) -> BernsteinPoly<T> {
    let s = m.degree;
    let d = m.dim;
    let mut coeffs = vec![T::zero(); (s + 1) * d];
    for i in 0..=s {
        for j in 0..=i {
            let w = binomial(i, j) as f64 / binomial(s, j) as f64;
            for k in 0..d {
                coeffs[i * d + k] += m.coeffs[j * d + k] * w;
            }
        }
    }
    BernsteinPoly {
        degree: s,
        dim: d,
        coeffs,
    }
}

/// Inverse of [`monomial_to_bernstein`]:
/// `bⱼ = Σ_{i≤j} (−1)^{j−i} C(s,j) C(j,i) βᵢ`.
pub fn bernstein_to_monomial<T: Scalar>(p: &BernsteinPoly<T>) -> MonomialPoly<T> {
    let s = p.degree;
    let d = p.dim;
    let mut coeffs = vec![T::zero(); (s + 1) * d];
    for j in 0..=s {
        for i in 0..=j {
            let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * (binomial(s, j) * binomial(j, i)) as f64;
            for k in 0..d {
                coeffs[j * d + k] += p.coeffs[i * d + k] * w;
            }
        }
    }
    MonomialPoly {
        degree: s,
        dim: d,
        coeffs,
    }
}

/// Product in the Bernstein basis:
/// `c_k = Σ_{i+j=k} C(m,i)·C(s,j)/C(m+s,k) · aᵢ bⱼ`.
pub fn product<T: Scalar>(
    a: &BernsteinPoly<T>,
    b: &BernsteinPoly<T>,
    mode: ProductMode,
) -> Result<BernsteinPoly<T>, BernsteinError> {
    let (m, s) = (a.degree, b.degree);
    if m + s > MAX_DEGREE {
        return Err(BernsteinError::DegreeTooHigh(m + s));
    }
    let out_dim = match mode {
        ProductMode::Dot => {
            if a.dim != b.dim {
                return Err(BernsteinError::DimMismatch(a.dim, b.dim));
            }
            1
        }
        ProductMode::Scale => {
            if a.dim != 1 {
                return Err(BernsteinError::NotScalar(a.dim));
            }
            b.dim
        }
    };
    let mut coeffs = vec![T::zero(); (m + s + 1) * out_dim];
    for i in 0..=m {
        for j in 0..=s {
            let k = i + j;
            let w = (binomial(m, i) * binomial(s, j)) as f64 / binomial(m + s, k) as f64;
            match mode {
                ProductMode::Dot => {
                    let mut acc = T::zero();
                    for (&x, &y) in a.coeff(i).iter().zip(b.coeff(j)) {
                        acc += x * y;
                    }
                    coeffs[k] += acc * w;
                }
                ProductMode::Scale => {
                    let x = a.coeffs[i];
                    for (q, &y) in b.coeff(j).iter().enumerate() {
                        coeffs[k * out_dim + q] += x * y * w;
                    }
                }
            }
        }
    }
    Ok(BernsteinPoly {
        degree: m + s,
        dim: out_dim,
        coeffs,
    })
}
