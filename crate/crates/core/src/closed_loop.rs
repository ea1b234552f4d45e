//! PI voltage-mode loop closed around a single converter.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::buck_model::{ConverterParams, Input, OperatingPoint, Output, TransferMatrix};
use crate::error::{Error, Result};
use crate::ratfun::{hurwitz_stable, poly_roots, HurwitzReport, Polynomial, RationalFunction, Stability};

/// Relative size below which the DC input admittance is taken as zero.
const DC_ADMITTANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self> {
        let g = Self { kp, ki };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, x) in [("kp", self.kp), ("ki", self.ki)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidParameter { field, reason: format!("must be non-negative, got {x}") });
            }
        }
        if self.kp == 0.0 && self.ki == 0.0 {
            return Err(Error::DegenerateController);
        }
        Ok(())
    }
}

/// `G_c(s) = (kp s + ki) / s`, or the constant `kp` when `ki = 0`.
pub fn pi_tf(g: &PiGains) -> Result<RationalFunction> {
    g.validate()?;
    if g.ki == 0.0 {
        return Ok(RationalFunction::constant(g.kp));
    }
    RationalFunction::new(Polynomial::new(vec![g.ki, g.kp]), Polynomial::s())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSet {
    /// Audio susceptibility `v_c / v_in`.
    pub g_vg: RationalFunction,
    pub z_in: RationalFunction,
    pub z_out: RationalFunction,
    /// `T = H(v_c, d) G_c`.
    pub loop_gain: RationalFunction,
    /// `v_c / v_ref = T / (1 + T)`.
    pub reference_tracking: RationalFunction,
    /// Duty response to input voltage, `-G_c g_vg`.
    pub duty_per_vin: RationalFunction,
    /// Numerator of `1 + T`, in the scaling of the converter's `delta`.
    pub char_poly: Polynomial,
    pub verdict: HurwitzReport,
    h31_dc: f64,
    h33_dc: f64,
}

pub fn close_loop(h: &TransferMatrix, g: &PiGains) -> Result<ClosedLoopSet> {
    let gc = pi_tf(g)?;
    let h21 = h.get(Output::OutputVoltage, Input::InputVoltage);
    let h22 = h.get(Output::OutputVoltage, Input::LoadCurrent);
    let h23 = h.get(Output::OutputVoltage, Input::Duty);
    let h31 = h.get(Output::InputCurrent, Input::InputVoltage);
    let h33 = h.get(Output::InputCurrent, Input::Duty);

    let loop_gain = h23.mul(&gc)?;
    let one_plus_t = RationalFunction::one().add(&loop_gain)?;
    let g_vg = h21.div(&one_plus_t)?;
    let z_out = h22.neg().div(&one_plus_t)?;
    let reference_tracking = loop_gain.div(&one_plus_t)?;
    let duty_per_vin = gc.mul(&g_vg)?.neg();
    let y_in = h31.add(&h33.mul(&duty_per_vin)?)?;
    if y_in.is_zero() {
        return Err(Error::Undefined("closed-loop input admittance is identically zero".into()));
    }
    let z_in = y_in.reciprocal()?;

    let lead = h.delta().leading().expect("delta has degree 2");
    let char_poly = one_plus_t.num().scale(lead);
    let verdict = hurwitz_stable(&char_poly)?;

    Ok(ClosedLoopSet {
        g_vg,
        z_in,
        z_out,
        loop_gain,
        reference_tracking,
        duty_per_vin,
        char_poly,
        verdict,
        h31_dc: h31.dc_value().unwrap_or(0.0),
        h33_dc: h33.dc_value().unwrap_or(0.0),
    })
}

/// DC input resistance of a closed-loop converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcResistance {
    Finite(f64),
    Infinite,
}

/// Limit of `z_in(s)` as `s -> 0`.
///
/// Under integral action the loop rejects input-voltage changes, so the
/// admittance at DC is `H31(0) + H33(0) * (d/v_in)(0)`; the two terms
/// cancel exactly when the `I_L d` input-current term is omitted.
pub fn dc_input_resistance(cl: &ClosedLoopSet, op: &OperatingPoint, p: &ConverterParams) -> DcResistance {
    let x = cl.duty_per_vin.dc_value().unwrap_or(0.0);
    let a = cl.h31_dc;
    let b = cl.h33_dc * x;
    let y = a + b;
    // scale reference in case both terms vanish (open load, paper mode)
    let floor = op.duty * op.duty * p.conductance() + op.duty * op.i_l.abs() / p.v_in;
    if y.abs() <= DC_ADMITTANCE_TOL * (a.abs() + b.abs()).max(floor) || y == 0.0 {
        DcResistance::Infinite
    } else {
        DcResistance::Finite(1.0 / y)
    }
}

/// Closed-loop small-signal state matrix with states `(i_l, v_c, z)`,
/// `z` being the integral of the voltage error.
pub fn closed_loop_state_matrix(p: &ConverterParams, g: &PiGains) -> DMatrix<f64> {
    let (l, c, gl, v) = (p.l, p.c, p.conductance(), p.v_in);
    DMatrix::from_row_slice(3, 3, &[0.0, -(1.0 + v * g.kp) / l, v * g.ki / l, 1.0 / c, -gl / c, 0.0, 0.0, -1.0, 0.0])
}

/// Summary of one closed-loop converter for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub v_in: f64,
    pub v_ref: f64,
    pub operating_point: OperatingPoint,
    pub char_poly: Polynomial,
    pub poles: Vec<Complex64>,
    pub verdict: Stability,
    pub max_real_part: f64,
    pub routh_agrees: bool,
    pub margins: Margins,
    pub dc_input_resistance: DcResistance,
}

pub fn stage_report(p: &ConverterParams, op: &OperatingPoint, cl: &ClosedLoopSet) -> Result<StageReport> {
    Ok(StageReport {
        v_in: p.v_in,
        v_ref: op.v_c,
        operating_point: *op,
        char_poly: cl.char_poly.clone(),
        poles: poly_roots(&cl.char_poly)?.expanded(),
        verdict: cl.verdict.verdict,
        max_real_part: cl.verdict.max_real_part,
        routh_agrees: cl.verdict.routh_agrees(),
        margins: margins(&cl.loop_gain)?,
        dc_input_resistance: dc_input_resistance(cl, op, p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub gain_margin_db: Option<f64>,
    pub phase_margin_deg: Option<f64>,
    pub gain_crossover_hz: Option<f64>,
    pub phase_crossover_hz: Option<f64>,
}

pub const MARGIN_POINTS_PER_DECADE: usize = 200;
const MARGIN_GRID_LO: f64 = 1e1;
const MARGIN_GRID_HI: f64 = 1e7;
const BISECTIONS: usize = 80;

/// Gain and phase margins with the default grid density.
pub fn margins(loop_gain: &RationalFunction) -> Result<Margins> {
    margins_with(loop_gain, MARGIN_POINTS_PER_DECADE)
}

/// Gain and phase margins from a log grid in rad/s with bisection
/// refinement of each crossing.
///
/// The grid spans 1e1..1e7 rad/s, widened to two decades beyond the
/// loop's pole and zero magnitudes and further while the magnitude is
/// still moving toward 0 dB at an edge.
pub fn margins_with(loop_gain: &RationalFunction, points_per_decade: usize) -> Result<Margins> {
    if !loop_gain.is_proper() {
        return Err(Error::Undefined("margins need a proper loop gain".into()));
    }
    if points_per_decade < 10 {
        return Err(Error::InvalidGrid(format!("points_per_decade must be >= 10, got {points_per_decade}")));
    }
    let t = |w: f64| eval_nudged(loop_gain, w);
    let (lo, hi) = margin_range(loop_gain)?;

    let decades = (hi / lo).log10();
    let n = (decades * points_per_decade as f64).ceil() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| lo * 10f64.powf(decades * i as f64 / (n - 1) as f64)).collect();
    let values: Vec<Complex64> = grid.iter().map(|w| t(*w)).collect::<Result<_>>()?;
    let phase = unwrap_phase_deg(&values);

    let mut out =
        Margins { gain_margin_db: None, phase_margin_deg: None, gain_crossover_hz: None, phase_crossover_hz: None };

    for i in 0..n - 1 {
        let (m0, m1) = (values[i].norm() - 1.0, values[i + 1].norm() - 1.0);
        if m0 == 0.0 || m0 * m1 < 0.0 {
            let wc =
                if m0 == 0.0 { grid[i] } else { bisect_log(grid[i], grid[i + 1], |w| Ok(t(w)?.norm() - 1.0), m0)? };
            let ph = continue_phase(phase[i], t(wc)?);
            out.gain_crossover_hz = Some(wc / std::f64::consts::TAU);
            out.phase_margin_deg = Some(wrap_deg(180.0 + ph));
            break;
        }
    }

    let branch = |ph: f64| ((ph + 180.0) / 360.0).floor();
    for i in 0..n - 1 {
        let (k0, k1) = (branch(phase[i]), branch(phase[i + 1]));
        if k0 != k1 {
            let target = -180.0 + 360.0 * k0.max(k1);
            let anchor = phase[i];
            let f = |w: f64| Ok(continue_phase(anchor, t(w)?) - target);
            let f0 = phase[i] - target;
            let wp = if f0 == 0.0 { grid[i] } else { bisect_log(grid[i], grid[i + 1], f, f0)? };
            out.phase_crossover_hz = Some(wp / std::f64::consts::TAU);
            out.gain_margin_db = Some(-20.0 * t(wp)?.norm().log10());
            break;
        }
    }
    Ok(out)
}

fn margin_range(loop_gain: &RationalFunction) -> Result<(f64, f64)> {
    let mut features = Vec::new();
    for set in [loop_gain.poles()?, loop_gain.zeros()?] {
        features.extend(set.roots().iter().map(|r| r.norm()).filter(|m| *m > 0.0));
    }
    let fmin = features.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = features.iter().copied().fold(0.0, f64::max);
    let mut lo = MARGIN_GRID_LO.min(fmin / 100.0);
    let mut hi = MARGIN_GRID_HI.max(fmax * 100.0);
    let mag = |w: f64| eval_nudged(loop_gain, w).map(|v| v.norm());
    while lo > 1e-6 && mag(lo)? < 1.0 && mag(lo / 10.0)? > mag(lo)? {
        lo /= 10.0;
    }
    while hi < 1e13 && mag(hi)? > 1.0 && mag(hi * 10.0)? < mag(hi)? {
        hi *= 10.0;
    }
    Ok((lo, hi))
}

/// `f(j w)`, nudged by one part in 1e9 if `j w` is a pole.
pub(crate) fn eval_nudged(f: &RationalFunction, w: f64) -> Result<Complex64> {
    match f.eval(Complex64::new(0.0, w)) {
        Err(Error::EvaluationAtPole { .. }) => f.eval(Complex64::new(0.0, w * (1.0 + 1e-9))),
        other => other,
    }
}

/// Bisection in `log w` for a sign change of `f`; `f_lo` is `f(lo)`.
fn bisect_log(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64>, mut f_lo: f64) -> Result<f64> {
    for _ in 0..BISECTIONS {
        let mid = (lo * hi).sqrt();
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Phase of `v` in degrees on the branch nearest `anchor`.
pub(crate) fn continue_phase(anchor: f64, v: Complex64) -> f64 {
    let p = v.arg().to_degrees();
    p + 360.0 * ((anchor - p) / 360.0).round()
}

pub(crate) fn unwrap_phase_deg(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        if i == 0 {
            out.push(v.arg().to_degrees());
        } else {
            out.push(continue_phase(out[i - 1], *v));
        }
    }
    out
}

fn wrap_deg(x: f64) -> f64 {
    let y = x.rem_euclid(360.0);
    if y > 180.0 {
        y - 360.0
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buck_model::{operating_point, tf_matrix, Feedthrough, Load};
    use crate::ratfun::{rf_eval, Stability};

    fn conv(n: usize) -> (ConverterParams, PiGains) {
        match n {
            1 => (
                ConverterParams::new(100.0, 0.167e-3, 3.75e-6, Load::Resistive(5.0)).unwrap(),
                PiGains::new(0.0093602, 275.3).unwrap(),
            ),
            _ => (
                ConverterParams::new(100.0, 0.003e-3, 23.44e-6, Load::Resistive(0.8)).unwrap(),
                PiGains::new(0.01956, 537.4).unwrap(),
            ),
        }
    }

    fn closed(n: usize, mode: Feedthrough) -> (ConverterParams, OperatingPoint, ClosedLoopSet) {
        let (p, g) = conv(n);
        let op = operating_point(&p, 50.0).unwrap();
        let h = tf_matrix(&p, &op, mode).unwrap();
        (p, op, close_loop(&h, &g).unwrap())
    }

    #[test]
    fn pi_transfer_function() {
        let gc = pi_tf(&PiGains { kp: 0.0093602, ki: 275.3 }).unwrap();
        assert_eq!(gc.num().coeffs(), &[275.3, 0.0093602]);
        assert_eq!(gc.den().coeffs(), &[0.0, 1.0]);
        let p = pi_tf(&PiGains { kp: 1.0, ki: 0.0 }).unwrap();
        assert_eq!(p, RationalFunction::one());
        assert_eq!(pi_tf(&PiGains { kp: 0.0, ki: 0.0 }), Err(Error::DegenerateController));
    }

    #[test]
    fn pi_identity_on_the_axis() {
        let g = PiGains { kp: 0.01956, ki: 537.4 };
        let gc = pi_tf(&g).unwrap();
        for w in [1.0, 37.0, 1.0e3, 2.5e5] {
            let s = Complex64::new(0.0, w);
            let lhs = rf_eval(&gc, s).unwrap() * s;
            let rhs = s * g.kp + g.ki;
            assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        }
    }

    #[test]
    fn converter_one_char_poly() {
        let (_, _, cl) = closed(1, Feedthrough::Physical);
        let want = [137650.0, 9.6801, 1.67e-4, 3.13125e-9];
        assert_eq!(cl.char_poly.degree(), Some(3));
        for (k, w) in want.iter().enumerate() {
            let got = cl.char_poly.coeff(k);
            assert!((got - w).abs() <= 1e-12 * w.abs(), "coeff {k}: {got} vs {w}");
        }
        assert_eq!(cl.verdict.verdict, Stability::Stable);
    }

    #[test]
    fn integral_action_rejects_input_voltage_at_dc() {
        for mode in [Feedthrough::Paper, Feedthrough::Physical] {
            let (_, _, cl) = closed(1, mode);
            assert_eq!(cl.g_vg.dc_value(), Some(0.0));
            assert_eq!(cl.z_out.dc_value(), Some(0.0));
        }
    }

    #[test]
    fn dc_input_resistance_modes() {
        let (p, op, cl) = closed(2, Feedthrough::Physical);
        match dc_input_resistance(&cl, &op, &p) {
            DcResistance::Finite(r) => assert!((r + 3.2).abs() < 1e-9 * 3.2, "{r}"),
            DcResistance::Infinite => panic!("expected finite"),
        }
        let (p, op, cl) = closed(2, Feedthrough::Paper);
        assert_eq!(dc_input_resistance(&cl, &op, &p), DcResistance::Infinite);
    }

    #[test]
    fn dc_input_resistance_near_unity_duty() {
        let p = ConverterParams::new(10.0, 1e-4, 1e-5, Load::Resistive(1.0)).unwrap();
        let op = operating_point(&p, 9.999_999).unwrap();
        let h = tf_matrix(&p, &op, Feedthrough::Physical).unwrap();
        let cl = close_loop(&h, &PiGains { kp: 0.01, ki: 100.0 }).unwrap();
        match dc_input_resistance(&cl, &op, &p) {
            DcResistance::Finite(r) => assert!((r + 1.0).abs() < 1e-6, "{r}"),
            DcResistance::Infinite => panic!("expected finite"),
        }
    }

    #[test]
    fn vanishing_controller_recovers_open_loop() {
        let (p, _) = conv(1);
        let op = operating_point(&p, 50.0).unwrap();
        let h = tf_matrix(&p, &op, Feedthrough::Physical).unwrap();
        let ol = crate::buck_model::open_loop_quantities(&h).unwrap();
        let cl = close_loop(&h, &PiGains { kp: 1e-7, ki: 0.0 }).unwrap();
        let s = Complex64::new(0.0, 2.0e4);
        for (a, b) in [(&cl.g_vg, &ol.g_vg), (&cl.z_out, &ol.z_out), (&cl.z_in, &ol.z_in)] {
            let (x, y) = (rf_eval(a, s).unwrap(), rf_eval(b, s).unwrap());
            assert!((x - y).norm() < 1e-4 * y.norm());
        }
    }

    #[test]
    fn integrator_margins() {
        let t = RationalFunction::new(Polynomial::one(), Polynomial::s()).unwrap();
        let m = margins(&t).unwrap();
        assert!((m.phase_margin_deg.unwrap() - 90.0).abs() < 1e-9);
        assert!((m.gain_crossover_hz.unwrap() * std::f64::consts::TAU - 1.0).abs() < 1e-9);
        assert_eq!(m.gain_margin_db, None);
        assert_eq!(m.phase_crossover_hz, None);

        let t10 = t.scale(10.0);
        let m = margins(&t10).unwrap();
        assert!((m.gain_crossover_hz.unwrap() * std::f64::consts::TAU - 10.0).abs() < 1e-8);
    }

    #[test]
    fn third_order_gain_margin() {
        // T = 8 / (s + 1)^3: phase crossover at sqrt(3) rad/s, |T| = 1 there
        let t = RationalFunction::new(Polynomial::constant(8.0), Polynomial::new(vec![1.0, 3.0, 3.0, 1.0])).unwrap();
        let m = margins(&t).unwrap();
        assert!((m.phase_crossover_hz.unwrap() * std::f64::consts::TAU - 3f64.sqrt()).abs() < 1e-8);
        assert!(m.gain_margin_db.unwrap().abs() < 1e-7);
    }

    #[test]
    fn converter_one_margins_consistent_with_verdict() {
        let (_, _, cl) = closed(1, Feedthrough::Physical);
        let m = margins(&cl.loop_gain).unwrap();
        let pm = m.phase_margin_deg.unwrap();
        assert!(pm > 0.0 && pm < 180.0, "{pm}");
        assert!(cl.verdict.verdict.is_stable());
    }
}
