//! Hurwitz stability classification of characteristic polynomials.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::Polynomial;
use super::roots::poly_roots;
use crate::error::{Error, Result};

/// Relative half-width of the band around the imaginary axis classified as
/// marginal, scaled by the largest root magnitude.
pub const STABILITY_REL_EPS: f64 = 1e-6;
/// Band half-width used when every root is tiny (rad/s).
pub const STABILITY_ABS_EPS: f64 = 1e-9;

/// Highest degree for which the Routh table cross-check is run.
pub const ROUTH_MAX_DEGREE: usize = 4;

const ROUTH_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        self == Stability::Stable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurwitzReport {
    pub verdict: Stability,
    pub max_real_part: f64,
    pub epsilon: f64,
    /// Roots with real part beyond `epsilon`, counted with multiplicity.
    pub rhp_count: usize,
    /// Independent Routh verdict, for degree <= `ROUTH_MAX_DEGREE`.
    pub routh: Option<Stability>,
}

impl HurwitzReport {
    /// False only when the Routh table ran and disagrees on stable vs not.
    pub fn routh_agrees(&self) -> bool {
        self.routh.is_none_or(|r| r.is_stable() == self.verdict.is_stable())
    }
}

pub fn hurwitz_stable(p: &Polynomial) -> Result<HurwitzReport> {
    let deg = p.degree().ok_or(Error::ZeroPolynomial)?;
    if deg == 0 {
        return Err(Error::Undefined("stability of a constant polynomial".into()));
    }
    let roots = poly_roots(p)?;
    let s = classify_spectrum(&roots.expanded());
    let routh = (deg <= ROUTH_MAX_DEGREE).then(|| routh_verdict(p));
    Ok(HurwitzReport {
        verdict: s.verdict,
        max_real_part: s.max_real_part,
        epsilon: s.epsilon,
        rhp_count: s.rhp_count,
        routh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumVerdict {
    pub verdict: Stability,
    pub max_real_part: f64,
    pub epsilon: f64,
    pub rhp_count: usize,
}

/// Classifies a set of poles or eigenvalues (listed with multiplicity)
/// with the same marginal band as `hurwitz_stable`.
pub fn classify_spectrum(roots: &[Complex64]) -> SpectrumVerdict {
    let max_mag = roots.iter().fold(0.0f64, |m, r| m.max(r.norm()));
    let max_real_part = roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
    let epsilon = (STABILITY_REL_EPS * max_mag).max(STABILITY_ABS_EPS);
    let rhp_count = roots.iter().filter(|r| r.re > epsilon).count();
    let verdict = if rhp_count > 0 {
        Stability::Unstable
    } else if roots.iter().any(|r| r.re.abs() <= epsilon) {
        Stability::Marginal
    } else {
        Stability::Stable
    };
    SpectrumVerdict { verdict, max_real_part, epsilon, rhp_count }
}

/// Routh–Hurwitz table classification, independent of root finding.
///
/// Sign changes in the first column mean right-half-plane roots. A zero
/// row (roots symmetric about the origin) or an isolated zero pivot with
/// no sign changes is reported as marginal.
pub fn routh_verdict(p: &Polynomial) -> Stability {
    let Some(n) = p.degree() else {
        return Stability::Marginal;
    };
    // coefficients in descending powers
    let a: Vec<f64> = (0..=n).rev().map(|k| p.coeff(k)).collect();
    let width = n / 2 + 1;
    let row_from = |start: usize| -> Vec<f64> {
        let mut r: Vec<f64> = a.iter().skip(start).step_by(2).copied().collect();
        r.resize(width, 0.0);
        r
    };
    let mut prev = row_from(0);
    let mut cur = row_from(1);
    let mut first_column = vec![prev[0]];
    let mut degenerate = false;

    for i in 1..=n {
        if cur.iter().all(|x| *x == 0.0) {
            // auxiliary polynomial from the previous row, power n - i + 1
            degenerate = true;
            let m = (n + 1 - i) as f64;
            cur = prev.iter().enumerate().map(|(j, x)| x * (m - 2.0 * j as f64)).collect();
            cur.resize(width, 0.0);
        }
        if cur[0] == 0.0 {
            degenerate = true;
            let scale = cur.iter().chain(prev.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
            cur[0] = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        }
        first_column.push(cur[0]);
        if i == n {
            break;
        }
        let mut next = vec![0.0; width];
        for j in 0..width - 1 {
            let x = cur[0] * prev[j + 1];
            let y = prev[0] * cur[j + 1];
            let diff = x - y;
            next[j] = if diff.abs() <= ROUTH_ZERO_TOL * (x.abs() + y.abs()) { 0.0 } else { diff / cur[0] };
        }
        prev = cur;
        cur = next;
    }

    let sign_changes = first_column.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
    if sign_changes > 0 {
        Stability::Unstable
    } else if degenerate {
        Stability::Marginal
    } else {
        Stability::Stable
    }
}
