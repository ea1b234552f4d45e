//! Real-coefficient polynomials in the Laplace variable.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Coefficients below this multiple of the operands' rounding error are
/// treated as exact cancellations in `add`/`sub`.
const CANCEL_ULPS: f64 = 4.0 * f64::EPSILON;

/// A polynomial with real coefficients in ascending powers of `s`.
///
/// The coefficient vector is always trimmed so the leading entry is
/// nonzero; the zero polynomial has an empty vector and no degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyOp {
    Add,
    Sub,
    Mul,
}

pub fn poly_arith(a: &Polynomial, b: &Polynomial, op: PolyOp) -> Polynomial {
    match op {
        PolyOp::Add => a + b,
        PolyOp::Sub => a - b,
        PolyOp::Mul => a * b,
    }
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `c * s^k`
    pub fn monomial(c: f64, k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = c;
        Self::new(coeffs)
    }

    /// `s`
    pub fn s() -> Self {
        Self::monomial(1.0, 1)
    }

    /// Builds `lead * prod (s - r)` from a conjugate-closed root list.
    ///
    /// Roots with positive imaginary part are combined with their
    /// conjugate into a real quadratic factor; roots with negative
    /// imaginary part are skipped (their partner supplies them).
    pub fn from_roots(lead: f64, roots: &[Complex64]) -> Self {
        let mut p = Self::constant(lead);
        for r in roots {
            if r.im > 0.0 {
                p = &p * &Self::new(vec![r.norm_sqr(), -2.0 * r.re, 1.0]);
            } else if r.im == 0.0 {
                p = &p * &Self::new(vec![-r.re, 1.0]);
            }
        }
        p
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading(&self) -> Option<f64> {
        self.coeffs.last().copied()
    }

    /// Coefficient of `s^k`, zero past the degree.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Multiplicity of the root at the origin.
    pub fn origin_multiplicity(&self) -> usize {
        self.coeffs.iter().take_while(|c| **c == 0.0).count()
    }

    /// Divides out `s^k`; the caller guarantees the low coefficients are zero.
    pub(crate) fn shift_down(&self, k: usize) -> Self {
        Self::new(self.coeffs[k.min(self.coeffs.len())..].to_vec())
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Radius that balances the outermost nonzero coefficients,
    /// `(|a_low| / |a_high|)^(1 / (high - low))`. Substituting `s = rho z`
    /// makes the extreme coefficients of the result equal in magnitude.
    pub fn balancing_radius(&self) -> f64 {
        let low = self.origin_multiplicity();
        match self.degree() {
            Some(n) if n > low => {
                let r = (self.coeffs[low].abs() / self.coeffs[n].abs()).powf(1.0 / (n - low) as f64);
                if r.is_finite() && r > 0.0 {
                    r
                } else {
                    1.0
                }
            }
            _ => 1.0,
        }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Horner evaluation in the scaled variable `z = s / rho`; returns
    /// `sum a_k rho^k z^k`, which equals `p(s)` up to rounding.
    pub fn eval_scaled(&self, s: Complex64, rho: f64) -> Complex64 {
        let z = s / rho;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * z + c * rho.powi(k as i32);
        }
        acc
    }

    /// `sum |a_k| |s|^k`, the magnitude scale of the terms summed by `eval`.
    pub fn abs_eval(&self, s: Complex64) -> f64 {
        let r = s.norm();
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c.abs())
    }

    pub fn derivative(&self) -> Self {
        Self::new(self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect())
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|k| {
                let a = self.coeff(k);
                let b = sign * other.coeff(k);
                let c = a + b;
                if c.abs() <= CANCEL_ULPS * (a.abs() + b.abs()) {
                    0.0
                } else {
                    c
                }
            })
            .collect();
        Self::new(coeffs)
    }

    pub fn to_string_in(&self, var: &str) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let mut terms = Vec::new();
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if *c == 0.0 {
                continue;
            }
            terms.push(match k {
                0 => format!("{c}"),
                1 => format!("{c}{var}"),
                _ => format!("{c}{var}^{k}"),
            });
        }
        terms.join(" + ").replace("+ -", "- ")
    }
}

impl From<Vec<f64>> for Polynomial {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_string_in("s"))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        -&self
    }
}
