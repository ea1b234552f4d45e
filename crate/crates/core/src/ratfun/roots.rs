//! Polynomial roots via companion-matrix eigenvalues.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::Polynomial;
use crate::eigen;
use crate::error::{Error, Result};

/// Bound on `|p(r)| / (max|a_k| * max(1, |r|)^deg)` accepted for a root.
pub const ROOT_RESIDUAL_TOL: f64 = 1e-10;

/// Roots closer than this (relative) are reported as one multiple root.
const CLUSTER_TOL: f64 = 1e-6;

const NEWTON_STEPS: usize = 8;

/// Distinct roots of a real polynomial together with their multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    roots: Vec<Complex64>,
    multiplicities: Vec<usize>,
}

impl RootSet {
    pub fn empty() -> Self {
        Self { roots: Vec::new(), multiplicities: Vec::new() }
    }

    pub fn roots(&self) -> &[Complex64] {
        &self.roots
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// Total count with multiplicity; equals the source polynomial's degree.
    pub fn count(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// Every root repeated according to its multiplicity.
    pub fn expanded(&self) -> Vec<Complex64> {
        self.roots.iter().zip(&self.multiplicities).flat_map(|(r, m)| std::iter::repeat_n(*r, *m)).collect()
    }

    pub fn max_real_part(&self) -> Option<f64> {
        self.roots.iter().map(|r| r.re).reduce(f64::max)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.roots.iter().fold(0.0, |m, r| m.max(r.norm()))
    }

    /// Number of roots (with multiplicity) with real part above `eps`.
    pub fn count_rhp(&self, eps: f64) -> usize {
        self.roots.iter().zip(&self.multiplicities).filter(|(r, _)| r.re > eps).map(|(_, m)| m).sum()
    }
}

/// Normalized residual of a candidate root.
pub fn root_residual(p: &Polynomial, r: Complex64) -> f64 {
    let deg = p.degree().unwrap_or(0) as i32;
    let scale = p.max_abs_coeff() * r.norm().max(1.0).powi(deg);
    if scale == 0.0 {
        return 0.0;
    }
    p.eval(r).norm() / scale
}

pub fn poly_roots(p: &Polynomial) -> Result<RootSet> {
    let Some(deg) = p.degree() else {
        return Err(Error::ZeroPolynomial);
    };
    let zeros = p.origin_multiplicity();
    let q = p.shift_down(zeros);
    let n = deg - zeros;

    let mut found = if n == 0 { Vec::new() } else { nonzero_roots(&q, n)? };
    symmetrize(&mut found);

    let mut out = cluster(found);
    if zeros > 0 {
        out.roots.insert(0, Complex64::new(0.0, 0.0));
        out.multiplicities.insert(0, zeros);
    }
    Ok(out)
}

/// Roots of a polynomial with nonzero constant term and degree `n >= 1`.
fn nonzero_roots(q: &Polynomial, n: usize) -> Result<Vec<Complex64>> {
    let rho = q.balancing_radius();
    let lead = q.coeff(n);
    // monic polynomial in z = s / rho
    let b: Vec<f64> = (0..n).map(|k| q.coeff(k) * rho.powi(k as i32 - n as i32) / lead).collect();

    let z_roots = if n == 1 {
        vec![Complex64::new(-b[0], 0.0)]
    } else {
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            companion[(i, i - 1)] = 1.0;
        }
        for (i, bi) in b.iter().enumerate() {
            companion[(i, n - 1)] = -bi;
        }
        eigen::eigenvalues(&companion)?
    };

    let scaled = Polynomial::new(b.iter().copied().chain(std::iter::once(1.0)).collect());
    let dscaled = scaled.derivative();
    Ok(z_roots.into_iter().map(|z| newton_polish(&scaled, &dscaled, z) * rho).collect())
}

fn newton_polish(p: &Polynomial, dp: &Polynomial, mut z: Complex64) -> Complex64 {
    let mut fz = p.eval(z).norm();
    for _ in 0..NEWTON_STEPS {
        if fz == 0.0 {
            break;
        }
        let d = dp.eval(z);
        if d.norm() == 0.0 {
            break;
        }
        let next = z - p.eval(z) / d;
        let fn_ = p.eval(next).norm();
        if fn_.partial_cmp(&fz) != Some(std::cmp::Ordering::Less) {
            break;
        }
        z = next;
        fz = fn_;
    }
    z
}

/// Pairs each upper-half-plane root with its nearest lower-half-plane
/// partner and replaces both by an exact conjugate pair; unpaired roots
/// are projected onto the real axis.
fn symmetrize(roots: &mut [Complex64]) {
    let n = roots.len();
    let mut done = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| roots[*b].im.total_cmp(&roots[*a].im));
    for &i in &order {
        if done[i] || roots[i].im <= 0.0 {
            continue;
        }
        let target = roots[i].conj();
        let partner = (0..n)
            .filter(|j| *j != i && !done[*j] && roots[*j].im <= 0.0)
            .min_by(|a, b| (roots[*a] - target).norm().total_cmp(&(roots[*b] - target).norm()));
        done[i] = true;
        match partner {
            Some(j) => {
                let avg = (roots[i] + roots[j].conj()) * 0.5;
                roots[i] = avg;
                roots[j] = avg.conj();
                done[j] = true;
                if avg.im == 0.0 {
                    roots[i].im = 0.0;
                    roots[j].im = 0.0;
                }
            }
            None => roots[i].im = 0.0,
        }
    }
    for (i, r) in roots.iter_mut().enumerate() {
        if !done[i] {
            r.im = 0.0;
        }
    }
}

/// Single-linkage clustering of nearby roots into multiple roots.
fn cluster(roots: Vec<Complex64>) -> RootSet {
    let n = roots.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = roots[i].norm().max(roots[j].norm());
            if (roots[i] - roots[j]).norm() <= CLUSTER_TOL * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for (i, r) in roots.iter().enumerate() {
        let g = find(&mut parent, i);
        match groups.iter_mut().find(|(id, _)| *id == g) {
            Some((_, members)) => members.push(*r),
            None => groups.push((g, vec![*r])),
        }
    }
    let mut pairs: Vec<(Complex64, usize)> = groups
        .into_iter()
        .map(|(_, members)| {
            let m = members.len();
            let mut c = members.iter().sum::<Complex64>() / m as f64;
            // a symmetric cluster straddling the axis is a real multiple root
            if m > 1 && members.iter().any(|r| r.im > 0.0) && members.iter().any(|r| r.im < 0.0) {
                c.im = 0.0;
            }
            (c, m)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(b.0.im.total_cmp(&a.0.im)));
    RootSet { roots: pairs.iter().map(|p| p.0).collect(), multiplicities: pairs.iter().map(|p| p.1).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn factored_quadratic() {
        let rs = poly_roots(&Polynomial::new(vec![2.0, 3.0, 1.0])).unwrap();
        let r = sorted(rs.expanded());
        assert!((r[0] - Complex64::new(-2.0, 0.0)).norm() < 1e-14);
        assert!((r[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn lc_resonance_pair() {
        let (l, c): (f64, f64) = (0.167e-3, 3.75e-6);
        let w0 = 1.0 / (l * c).sqrt();
        assert!((w0 - 3.996e4).abs() / 3.996e4 < 1e-3);
        let rs = poly_roots(&Polynomial::new(vec![w0 * w0, 0.0, 1.0])).unwrap();
        let r = sorted(rs.expanded());
        assert_eq!(r.len(), 2);
        assert!(r[0].re.abs() < 1e-9 * w0 && (r[0].im + w0).abs() < 1e-12 * w0);
        assert!(r[1].re.abs() < 1e-9 * w0 && (r[1].im - w0).abs() < 1e-12 * w0);
        assert_eq!(r[0], r[1].conj());
    }

    #[test]
    fn triple_root_at_origin() {
        let rs = poly_roots(&Polynomial::monomial(1.0, 3)).unwrap();
        assert_eq!(rs.roots(), &[Complex64::new(0.0, 0.0)]);
        assert_eq!(rs.multiplicities(), &[3]);
    }

    #[test]
    fn constant_has_no_roots_and_zero_errors() {
        assert_eq!(poly_roots(&Polynomial::constant(4.0)).unwrap().count(), 0);
        assert_eq!(poly_roots(&Polynomial::zero()), Err(Error::ZeroPolynomial));
    }

    #[test]
    fn double_root_is_clustered() {
        // (s + 3)^2 (s + 1)
        let p = Polynomial::new(vec![9.0, 15.0, 7.0, 1.0]);
        let rs = poly_roots(&p).unwrap();
        assert_eq!(rs.count(), 3);
        let k = rs.roots().iter().position(|r| (r.re + 3.0).abs() < 1e-6).unwrap();
        assert_eq!(rs.multiplicities()[k], 2);
    }

    #[test]
    fn wide_dynamic_range_roots_have_small_residuals() {
        let p = Polynomial::new(vec![137650.0, 9.6801, 1.67e-4, 3.13125e-9]);
        let rs = poly_roots(&p).unwrap();
        assert_eq!(rs.count(), 3);
        for r in rs.roots() {
            assert!(root_residual(&p, *r) < ROOT_RESIDUAL_TOL);
            // relative accuracy check against the unscaled evaluation
            let rel = p.eval(*r).norm() / p.abs_eval(*r);
            assert!(rel < 1e-13, "rel residual {rel}");
        }
    }
}
