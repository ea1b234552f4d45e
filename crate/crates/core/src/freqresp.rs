//! Frequency sweeps, Bode data and Nyquist winding numbers.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{continue_phase, unwrap_phase_deg};
use crate::error::{Error, Result};
use crate::ratfun::RationalFunction;

/// Adjacent sweep samples are refined until their phase differs by less
/// than this many degrees.
pub const SWEEP_MAX_PHASE_STEP_DEG: f64 = 45.0;
const SWEEP_MAX_REFINEMENT_DEPTH: usize = 24;

const CONTOUR_MAX_STEP_RAD: f64 = PI / 8.0;
const CONTOUR_MAX_DEPTH: usize = 40;

/// Log-spaced sweep specification in hertz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points_per_decade: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { f_min_hz: 10.0, f_max_hz: 1e6, points_per_decade: 100 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min_hz > 0.0 && self.f_max_hz > self.f_min_hz && self.f_max_hz.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < f_min < f_max, got {} .. {}",
                self.f_min_hz, self.f_max_hz
            )));
        }
        if self.points_per_decade < 10 {
            return Err(Error::InvalidGrid(format!("points_per_decade must be >= 10, got {}", self.points_per_decade)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.f_min_hz, self.f_max_hz, self.points_per_decade)
    }
}

pub(crate) fn log_grid(lo: f64, hi: f64, ppd: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = ((decades * ppd as f64).round() as usize).max(1) + 1;
    (0..n).map(|i| if i == n - 1 { hi } else { lo * 10f64.powf(decades * i as f64 / (n - 1) as f64) }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Indices of samples moved off a pole by one part in 1e9.
    pub nudged: Vec<usize>,
}

impl FrequencyResponse {
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    pub fn phase_deg(&self) -> Vec<f64> {
        unwrap_phase_deg(&self.values)
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// CSV with header `freq_hz,real,imag,mag_db,phase_deg`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "freq_hz,real,imag,mag_db,phase_deg")?;
        let mag = self.magnitude_db();
        let ph = self.phase_deg();
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.freqs_hz[i], self.values[i].re, self.values[i].im, mag[i], ph[i]
            )?;
        }
        Ok(())
    }
}

/// Evaluates `f(j 2 pi f)`, nudging the frequency by one part in 1e9 on a pole.
pub(crate) fn sample(f: &RationalFunction, hz: f64) -> Result<(f64, Complex64, bool)> {
    match f.eval(Complex64::new(0.0, TAU * hz)) {
        Ok(v) => Ok((hz, v, false)),
        Err(Error::EvaluationAtPole { .. }) => {
            let nudged = hz * (1.0 + 1e-9);
            Ok((nudged, f.eval(Complex64::new(0.0, TAU * nudged))?, true))
        }
        Err(e) => Err(e),
    }
}

/// Log-spaced sweep with adaptive refinement near fast phase changes.
pub fn sweep(f: &RationalFunction, f_min: f64, f_max: f64, points_per_decade: usize) -> Result<FrequencyResponse> {
    let spec = SweepSpec { f_min_hz: f_min, f_max_hz: f_max, points_per_decade };
    spec.validate()?;
    let base: Vec<(f64, Complex64, bool)> = spec.grid().par_iter().map(|hz| sample(f, *hz)).collect::<Result<_>>()?;

    let mut samples = vec![base[0]];
    for w in base.windows(2) {
        refine(f, w[0], w[1], 0, &mut samples)?;
        samples.push(w[1]);
    }
    let nudged = samples.iter().enumerate().filter(|(_, s)| s.2).map(|(i, _)| i).collect();
    Ok(FrequencyResponse {
        freqs_hz: samples.iter().map(|s| s.0).collect(),
        values: samples.iter().map(|s| s.1).collect(),
        nudged,
    })
}

/// Inserts geometric midpoints between `a` and `b` (exclusive) until the
/// phase step between neighbours is below `SWEEP_MAX_PHASE_STEP_DEG`.
fn refine(
    f: &RationalFunction,
    a: (f64, Complex64, bool),
    b: (f64, Complex64, bool),
    depth: usize,
    out: &mut Vec<(f64, Complex64, bool)>,
) -> Result<()> {
    let pa = a.1.arg().to_degrees();
    let step = (continue_phase(pa, b.1) - pa).abs();
    if step < SWEEP_MAX_PHASE_STEP_DEG || depth >= SWEEP_MAX_REFINEMENT_DEPTH {
        return Ok(());
    }
    let mid = sample(f, (a.0 * b.0).sqrt())?;
    refine(f, a, mid, depth + 1, out)?;
    out.push(mid);
    refine(f, mid, b, depth + 1, out)
}

/// Clockwise encirclements of `about` by the Nyquist image of `f`,
/// which by the argument principle equals (zeros of `f - about` in the
/// open right half plane) minus (poles of `f` there).
///
/// The contour runs up the imaginary axis and closes with a right
/// half-plane arc beyond every root; imaginary-axis poles are bypassed
/// by small right-hand semicircles so they count as left half plane.
pub fn nyquist_winding(f: &RationalFunction, about: Complex64) -> Result<i64> {
    if f.is_zero() {
        if about.norm() == 0.0 {
            return Err(Error::WindingUndefined("contour passes through the point".into()));
        }
        return Ok(0);
    }
    let poles = f.poles()?;
    let zeros = f.zeros()?;
    if about.im != 0.0 {
        return Err(Error::WindingUndefined("point must be real for a real-coefficient function".into()));
    }
    let g = f.sub(&RationalFunction::constant(about.re))?;
    let shifted_zeros = g.zeros()?;

    let mags =
        poles.roots().iter().chain(zeros.roots()).chain(shifted_zeros.roots()).map(|r| r.norm()).filter(|m| *m > 0.0);
    let (mut lo_feature, mut hi_feature) = (f64::INFINITY, 0.0f64);
    for m in mags {
        lo_feature = lo_feature.min(m);
        hi_feature = hi_feature.max(m);
    }
    if !lo_feature.is_finite() {
        lo_feature = 1.0;
        hi_feature = 1.0;
    }
    let big = 1e3 * hi_feature.max(1.0);
    let indent = 1e-6 * lo_feature;

    // imaginary-axis poles, upper half only (conjugates are mirrored)
    let axis_tol = 1e-9 * hi_feature.max(1.0);
    let mut axis_poles: Vec<f64> =
        poles.roots().iter().filter(|r| r.re.abs() <= axis_tol && r.im >= 0.0).map(|r| r.im).collect();
    axis_poles.sort_by(f64::total_cmp);
    if axis_poles.iter().any(|w| *w + indent >= big) {
        return Err(Error::WindingUndefined("imaginary-axis pole beyond contour".into()));
    }

    let eval = |s: Complex64| -> Result<Complex64> {
        let v = g.eval(s)?;
        if v.norm() == 0.0 {
            return Err(Error::WindingUndefined(format!("f - about vanishes on the contour at {s}")));
        }
        Ok(v)
    };

    // piecewise contour: upper axis segments between indentations, then arc
    let mut pieces: Vec<Piece> = Vec::new();
    let mut w = 0.0;
    for &wp in &axis_poles {
        if wp == 0.0 {
            // quarter indentation at the origin, from s = indent to j indent
            pieces.push(Piece::Arc { center: Complex64::new(0.0, 0.0), radius: indent, from: 0.0, to: PI / 2.0 });
            w = indent;
            continue;
        }
        pieces.push(Piece::Axis { from: w, to: wp - indent });
        pieces.push(Piece::Arc { center: Complex64::new(0.0, wp), radius: indent, from: -PI / 2.0, to: PI / 2.0 });
        w = wp + indent;
    }
    if pieces.is_empty() {
        // start on the positive real axis at the origin
        w = 0.0;
    }
    pieces.push(Piece::Axis { from: w, to: big });
    pieces.push(Piece::Arc { center: Complex64::new(0.0, 0.0), radius: big, from: PI / 2.0, to: 0.0 });

    // the image of the lower half is the conjugate, so the total phase
    // change is twice the upper-half change
    let mut total = 0.0;
    for piece in &pieces {
        total += piece.phase_change(&eval, lo_feature)?;
    }
    let turns = -2.0 * total / TAU;
    let n = turns.round();
    if (turns - n).abs() > 0.05 {
        return Err(Error::WindingUndefined(format!("non-integer winding {turns}")));
    }
    Ok(n as i64)
}

enum Piece {
    Axis { from: f64, to: f64 },
    Arc { center: Complex64, radius: f64, from: f64, to: f64 },
}

impl Piece {
    fn point(&self, t: f64, scale: f64) -> Complex64 {
        match *self {
            Piece::Axis { from, to } => {
                // sinh-spaced so that many decades get resolved
                let (u0, u1) = ((from / scale).asinh(), (to / scale).asinh());
                Complex64::new(0.0, scale * (u0 + (u1 - u0) * t).sinh())
            }
            Piece::Arc { center, radius, from, to } => center + Complex64::from_polar(radius, from + (to - from) * t),
        }
    }

    fn phase_change(&self, eval: &impl Fn(Complex64) -> Result<Complex64>, scale: f64) -> Result<f64> {
        const COARSE: usize = 256;
        let mut total = 0.0;
        let mut prev_t = 0.0;
        let mut prev_v = eval(self.point(0.0, scale))?;
        for i in 1..=COARSE {
            let t = i as f64 / COARSE as f64;
            let v = eval(self.point(t, scale))?;
            total += self.segment(eval, scale, prev_t, prev_v, t, v, 0)?;
            prev_t = t;
            prev_v = v;
        }
        Ok(total)
    }

    #[allow(clippy::too_many_arguments)]
    fn segment(
        &self,
        eval: &impl Fn(Complex64) -> Result<Complex64>,
        scale: f64,
        ta: f64,
        va: Complex64,
        tb: f64,
        vb: Complex64,
        depth: usize,
    ) -> Result<f64> {
        let step = (vb / va).arg();
        if step.abs() < CONTOUR_MAX_STEP_RAD {
            return Ok(step);
        }
        if depth >= CONTOUR_MAX_DEPTH {
            return Err(Error::WindingUndefined("phase does not resolve; contour passes near the point".into()));
        }
        let tm = 0.5 * (ta + tb);
        let vm = eval(self.point(tm, scale))?;
        Ok(self.segment(eval, scale, ta, va, tm, vm, depth + 1)?
            + self.segment(eval, scale, tm, vm, tb, vb, depth + 1)?)
    }
}
