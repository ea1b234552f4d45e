//! Rational functions `num(s) / den(s)` kept in reduced, monic-denominator form.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::Polynomial;
use super::roots::{poly_roots, RootSet};
use crate::error::{Error, Result};

/// Relative distance below which a numerator root and a denominator root
/// are treated as the same factor and cancelled.
pub const CANCELLATION_TOL: f64 = 1e-8;

/// `|den(s)|` below this fraction of its term magnitudes marks a pole hit.
const POLE_HIT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalFunction {
    num: Polynomial,
    den: Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfOp {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn rf_arith(a: &RationalFunction, b: &RationalFunction, op: RfOp) -> Result<RationalFunction> {
    match op {
        RfOp::Add => a.add(b),
        RfOp::Sub => a.sub(b),
        RfOp::Mul => a.mul(b),
        RfOp::Div => a.div(b),
    }
}

pub fn rf_eval(f: &RationalFunction, s: Complex64) -> Result<Complex64> {
    f.eval(s)
}

impl RationalFunction {
    /// Builds `num / den`, cancelling common factors and normalizing the
    /// denominator to be monic.
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        if num.is_zero() {
            return Ok(Self::zero());
        }
        let (num, den) = split_common(&num, &den)?;
        Ok(Self::normalized(num, den))
    }

    /// Builds `num / den` from polynomials already known to be coprime.
    pub(crate) fn from_coprime(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        if num.is_zero() {
            return Ok(Self::zero());
        }
        Ok(Self::normalized(num, den))
    }

    fn normalized(num: Polynomial, den: Polynomial) -> Self {
        let lead = den.leading().expect("nonzero denominator");
        if lead == 1.0 {
            Self { num, den }
        } else {
            Self { num: num.scale(1.0 / lead), den: den.scale(1.0 / lead) }
        }
    }

    pub fn zero() -> Self {
        Self { num: Polynomial::zero(), den: Polynomial::one() }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self { num: Polynomial::constant(c), den: Polynomial::one() }
    }

    pub fn from_poly(p: Polynomial) -> Self {
        Self { num: p, den: Polynomial::one() }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_proper(&self) -> bool {
        self.num.degree().unwrap_or(0) <= self.den.degree().unwrap_or(0)
    }

    pub fn poles(&self) -> Result<RootSet> {
        poly_roots(&self.den)
    }

    pub fn zeros(&self) -> Result<RootSet> {
        if self.num.is_zero() {
            return Ok(RootSet::empty());
        }
        poly_roots(&self.num)
    }

    pub fn reciprocal(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Self::from_coprime(self.den.clone(), self.num.clone())
    }

    pub fn neg(&self) -> Self {
        Self { num: -&self.num, den: self.den.clone() }
    }

    pub fn scale(&self, k: f64) -> Self {
        if k == 0.0 {
            return Self::zero();
        }
        Self { num: self.num.scale(k), den: self.den.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.is_zero() {
            return Ok(other.clone());
        }
        if other.is_zero() {
            return Ok(self.clone());
        }
        if self.den == other.den {
            return Self::new(&self.num + &other.num, self.den.clone());
        }
        let (b_rest, d_rest) = split_common(&self.den, &other.den)?;
        // a/b + c/d = (a d' + c b') / (b d') with b = g b', d = g d'
        let num = &(&self.num * &d_rest) + &(&other.num * &b_rest);
        let den = &self.den * &d_rest;
        Self::new(num, den)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.is_zero() || other.is_zero() {
            return Ok(Self::zero());
        }
        let (a, d) = split_common(&self.num, &other.den)?;
        let (c, b) = split_common(&other.num, &self.den)?;
        Self::from_coprime(&a * &c, &b * &d)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.mul(&other.reciprocal()?)
    }

    pub fn eval(&self, s: Complex64) -> Result<Complex64> {
        let rho =
            if self.den.degree().unwrap_or(0) > 0 { self.den.balancing_radius() } else { self.num.balancing_radius() };
        let d = self.den.eval_scaled(s, rho);
        if d.norm() <= POLE_HIT_TOL * self.den.abs_eval(s) {
            let pole = self
                .poles()
                .ok()
                .and_then(|rs| rs.roots().iter().copied().min_by(|a, b| (a - s).norm().total_cmp(&(b - s).norm())))
                .unwrap_or(s);
            return Err(Error::EvaluationAtPole { s, pole });
        }
        Ok(self.num.eval_scaled(s, rho) / d)
    }

    /// Value at `s = 0` if the origin is not a pole.
    pub fn dc_value(&self) -> Option<f64> {
        let d = self.den.coeff(0);
        (d != 0.0).then(|| self.num.coeff(0) / d)
    }
}

impl fmt::Display for RationalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}

/// Removes factors shared by `p` and `q` (common origin multiplicity and
/// roots within `CANCELLATION_TOL`); returns the cofactors `(p/g, q/g)`.
fn split_common(p: &Polynomial, q: &Polynomial) -> Result<(Polynomial, Polynomial)> {
    if p.is_zero() || q.is_zero() {
        return Ok((p.clone(), q.clone()));
    }
    let k = p.origin_multiplicity().min(q.origin_multiplicity());
    let (p, q) = if k > 0 { (p.shift_down(k), q.shift_down(k)) } else { (p.clone(), q.clone()) };
    if p.degree() == Some(0) || q.degree() == Some(0) {
        return Ok((p, q));
    }
    let pr = poly_roots(&p)?.expanded();
    let qr = poly_roots(&q)?.expanded();
    let (p_used, q_used) = match_roots(&pr, &qr);
    if !p_used.iter().any(|u| *u) {
        return Ok((p, q));
    }
    let common = |roots: &[Complex64], used: &[bool]| -> Vec<Complex64> {
        roots.iter().zip(used).filter(|(_, u)| **u).map(|(r, _)| *r).collect()
    };
    Ok((deflate(&p, &common(&pr, &p_used)), deflate(&q, &common(&qr, &q_used))))
}

/// Divides the linear or quadratic factor of each root (upper-half-plane
/// representative for pairs) out of `p`. Small roots are removed from the
/// top coefficient down, large ones from the constant term up.
fn deflate(p: &Polynomial, roots: &[Complex64]) -> Polynomial {
    let low = p.origin_multiplicity();
    let mut c = p.shift_down(low).coeffs().to_vec();
    let mut factors: Vec<(f64, Vec<f64>)> = roots
        .iter()
        .filter(|r| r.im >= 0.0)
        .map(|r| {
            let f = if r.im == 0.0 { vec![-r.re, 1.0] } else { vec![r.norm_sqr(), -2.0 * r.re, 1.0] };
            (r.norm(), f)
        })
        .collect();
    factors.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (mag, f) in factors {
        let scale = Polynomial::new(c.clone()).balancing_radius();
        c = if mag <= scale { divide_top(&c, &f) } else { divide_bottom(&c, &f) };
    }
    c.splice(0..0, std::iter::repeat_n(0.0, low));
    Polynomial::new(c)
}

/// Quotient of `c / f` by long division from the leading coefficient.
fn divide_top(c: &[f64], f: &[f64]) -> Vec<f64> {
    let (n, m) = (c.len() - 1, f.len() - 1);
    let mut rem = c.to_vec();
    let mut q = vec![0.0; n - m + 1];
    for k in (0..=n - m).rev() {
        q[k] = rem[k + m] / f[m];
        for (j, fj) in f.iter().enumerate() {
            rem[k + j] -= q[k] * fj;
        }
    }
    q
}

/// Quotient of `c / f` by division from the constant term, exact when `f`
/// divides `c`.
fn divide_bottom(c: &[f64], f: &[f64]) -> Vec<f64> {
    let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
    rev(&divide_top(&rev(c), &rev(f)))
}

/// Greedy matching of conjugate-closed root lists. Real roots match real
/// roots; an upper-half-plane root matches an upper-half-plane root and
/// both conjugates are consumed together.
fn match_roots(pr: &[Complex64], qr: &[Complex64]) -> (Vec<bool>, Vec<bool>) {
    let mut pu = vec![false; pr.len()];
    let mut qu = vec![false; qr.len()];
    let close = |a: Complex64, b: Complex64| (a - b).norm() <= CANCELLATION_TOL * a.norm().max(b.norm());
    let conj_index = |roots: &[Complex64], used: &[bool], r: Complex64| {
        roots.iter().enumerate().position(|(i, x)| !used[i] && *x == r.conj())
    };
    for i in 0..pr.len() {
        let a = pr[i];
        if pu[i] || a.im < 0.0 {
            continue;
        }
        let real = a.im == 0.0;
        let candidate = (0..qr.len())
            .filter(|j| !qu[*j] && (qr[*j].im == 0.0) == real && qr[*j].im >= 0.0 && close(a, qr[*j]))
            .min_by(|x, y| (qr[*x] - a).norm().total_cmp(&(qr[*y] - a).norm()));
        let Some(j) = candidate else { continue };
        if real {
            pu[i] = true;
            qu[j] = true;
            continue;
        }
        pu[i] = true;
        qu[j] = true;
        let pc = conj_index(pr, &pu, a);
        let qc = conj_index(qr, &qu, qr[j]);
        match (pc, qc) {
            (Some(x), Some(y)) => {
                pu[x] = true;
                qu[y] = true;
            }
            _ => {
                // malformed pair; undo
                pu[i] = false;
                qu[j] = false;
            }
        }
    }
    (pu, qu)
}
