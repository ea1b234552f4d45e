use nalgebra::linalg::{balancing, Schur};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_SCHUR_ITERATIONS: usize = 100_000;

/// Eigenvalues of a real square matrix, after Parlett–Reinsch balancing.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut work = m.clone();
    balancing::balance_parlett_reinsch(&mut work);
    let schur = Schur::try_new(work, f64::EPSILON, MAX_SCHUR_ITERATIONS).ok_or(Error::EigenNoConvergence(n))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Greedy nearest matching of two eigenvalue/root multisets; returns the
/// worst relative distance `|a - b| / max(|a|, |b|, floor)`.
pub fn max_matched_relative_distance(a: &[Complex64], b: &[Complex64], floor: f64) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|l, r| l.1.total_cmp(&r.1))?;
        used[j] = true;
        let scale = x.norm().max(b[j].norm()).max(floor);
        worst = worst.max(d / scale);
    }
    Some(worst)
}
