//! Averaged small-signal model of a single buck converter.
//!
//! States are the inductor current `i_l` and capacitor voltage `v_c`;
//! inputs are the input voltage `v_in`, the external load current
//! `i_load` and the duty cycle `d`; outputs are `i_l`, `v_c` and the input
//! current `i_in = d * i_l`. The resistive load enters through its
//! conductance so that an open load (`G = 0`) is an ordinary value.

use nalgebra::{Complex, Matrix2, Matrix2x3, Matrix3, Matrix3x2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratfun::{Polynomial, RationalFunction};

/// Local resistive load of a converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Load {
    Resistive(f64),
    Open(OpenLoad),
}

/// Serialized as the string `"open"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpenLoad {
    Open,
}

impl Load {
    pub const OPEN: Load = Load::Open(OpenLoad::Open);

    pub fn conductance(self) -> f64 {
        match self {
            Load::Resistive(r) => 1.0 / r,
            Load::Open(_) => 0.0,
        }
    }

    pub fn resistance(self) -> Option<f64> {
        match self {
            Load::Resistive(r) => Some(r),
            Load::Open(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub v_in: f64,
    pub l: f64,
    pub c: f64,
    pub load: Load,
}

impl ConverterParams {
    pub fn new(v_in: f64, l: f64, c: f64, load: Load) -> Result<Self> {
        let p = Self { v_in, l, c, load };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { field, reason: format!("must be positive and finite, got {x}") })
            }
        };
        positive("v_in", self.v_in)?;
        positive("l", self.l)?;
        positive("c", self.c)?;
        if let Load::Resistive(r) = self.load {
            positive("r_load", r)?;
        }
        Ok(())
    }

    pub fn conductance(&self) -> f64 {
        self.load.conductance()
    }

    /// Undamped natural frequency `1 / sqrt(L C)` in rad/s.
    pub fn natural_frequency(&self) -> f64 {
        1.0 / (self.l * self.c).sqrt()
    }

    /// The common denominator of the transfer matrix, in the scaling used
    /// for printed results: `L R C s^2 + L s + R` for a resistive load and
    /// `L C s^2 + 1` for an open load.
    pub fn delta(&self) -> Polynomial {
        match self.load {
            Load::Resistive(r) => Polynomial::new(vec![r, self.l, self.l * r * self.c]),
            Load::Open(_) => Polynomial::new(vec![1.0, 0.0, self.l * self.c]),
        }
    }
}

/// Steady state around which the small-signal model is linearized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub duty: f64,
    pub v_c: f64,
    pub i_l: f64,
}

/// Equilibrium for output regulated at `v_ref` with no external load current.
pub fn operating_point(p: &ConverterParams, v_ref: f64) -> Result<OperatingPoint> {
    operating_point_with_load(p, v_ref, 0.0)
}

/// Equilibrium with an additional constant external load current `i_ext`.
pub fn operating_point_with_load(p: &ConverterParams, v_ref: f64, i_ext: f64) -> Result<OperatingPoint> {
    p.validate()?;
    if !(v_ref.is_finite() && v_ref >= 0.0) {
        return Err(Error::InvalidParameter { field: "v_ref", reason: format!("must be non-negative, got {v_ref}") });
    }
    if v_ref >= p.v_in {
        return Err(Error::CannotStepUp { v_ref, v_in: p.v_in });
    }
    let duty = v_ref / p.v_in;
    let i_l = if v_ref == 0.0 { 0.0 } else { v_ref * p.conductance() + i_ext };
    Ok(OperatingPoint { duty, v_c: v_ref, i_l })
}

/// How the input current `i_in = d * i_l` is linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedthrough {
    /// `i_in = D * i_l` only, the bilinear term is dropped.
    Paper,
    /// `i_in = D * i_l + I_L * d`.
    #[default]
    Physical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Matrix2<f64>,
    pub b: Matrix2x3<f64>,
    pub c: Matrix3x2<f64>,
    pub d: Matrix3<f64>,
}

impl StateSpace {
    /// `C (sI - A)^-1 B + D` evaluated numerically.
    pub fn transfer_at(&self, s: Complex64) -> Option<Matrix3<Complex64>> {
        let cplx = |x: f64| Complex::new(x, 0.0);
        let si_a = Matrix2::<Complex64>::identity() * s - self.a.map(cplx);
        let inv = si_a.try_inverse()?;
        Some(self.c.map(cplx) * inv * self.b.map(cplx) + self.d.map(cplx))
    }
}

pub fn state_space(p: &ConverterParams, op: &OperatingPoint, feedthrough: Feedthrough) -> StateSpace {
    let (l, c, g) = (p.l, p.c, p.conductance());
    let a = Matrix2::new(0.0, -1.0 / l, 1.0 / c, -g / c);
    let b = Matrix2x3::new(op.duty / l, 0.0, p.v_in / l, 0.0, -1.0 / c, 0.0);
    let cm = Matrix3x2::new(1.0, 0.0, 0.0, 1.0, op.duty, 0.0);
    let mut d = Matrix3::zeros();
    if feedthrough == Feedthrough::Physical {
        d[(2, 2)] = op.i_l;
    }
    StateSpace { a, b, c: cm, d }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    InductorCurrent = 0,
    OutputVoltage = 1,
    InputCurrent = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    InputVoltage = 0,
    LoadCurrent = 1,
    Duty = 2,
}

/// Open-loop map from `(v_in, i_load, d)` to `(i_l, v_c, i_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    h: [[RationalFunction; 3]; 3],
    delta: Polynomial,
    feedthrough: Feedthrough,
}

impl TransferMatrix {
    pub fn get(&self, out: Output, input: Input) -> &RationalFunction {
        &self.h[out as usize][input as usize]
    }

    pub fn entries(&self) -> &[[RationalFunction; 3]; 3] {
        &self.h
    }

    /// Shared denominator in the scaling of `ConverterParams::delta`.
    pub fn delta(&self) -> &Polynomial {
        &self.delta
    }

    pub fn feedthrough(&self) -> Feedthrough {
        self.feedthrough
    }
}

/// Closed-form transfer matrix.
///
/// With `Δ_G = L C s^2 + G L s + 1` the entries are
/// `i_l = [D (Cs+G), 1, V_in (Cs+G)] / Δ_G`,
/// `v_c = [D, -sL, V_in] / Δ_G` and `i_in = D * i_l`, plus the constant
/// `I_L` on `(i_in, d)` when the physical feedthrough is enabled.
pub fn tf_matrix(p: &ConverterParams, op: &OperatingPoint, feedthrough: Feedthrough) -> Result<TransferMatrix> {
    let (l, c, g, v_in, duty) = (p.l, p.c, p.conductance(), p.v_in, op.duty);
    let den = Polynomial::new(vec![1.0, g * l, l * c]);
    let cs_g = Polynomial::new(vec![g, c]);
    let entry = |num: Polynomial| RationalFunction::new(num, den.clone());

    let i_l = [entry(cs_g.scale(duty))?, entry(Polynomial::one())?, entry(cs_g.scale(v_in))?];
    let v_c =
        [entry(Polynomial::constant(duty))?, entry(Polynomial::monomial(-l, 1))?, entry(Polynomial::constant(v_in))?];
    let mut i_in = [i_l[0].scale(duty), i_l[1].scale(duty), i_l[2].scale(duty)];
    if feedthrough == Feedthrough::Physical && op.i_l != 0.0 {
        let num = &cs_g.scale(duty * v_in) + &den.scale(op.i_l);
        i_in[2] = RationalFunction::new(num, den.clone())?;
    }
    Ok(TransferMatrix { h: [i_l, v_c, i_in], delta: p.delta(), feedthrough })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopQuantities {
    pub g_vg: RationalFunction,
    pub z_in: RationalFunction,
    pub z_out: RationalFunction,
}

pub fn open_loop_quantities(h: &TransferMatrix) -> Result<OpenLoopQuantities> {
    let h31 = h.get(Output::InputCurrent, Input::InputVoltage);
    if h31.is_zero() {
        return Err(Error::Undefined("open-loop input impedance undefined: H(i_in, v_in) is identically zero".into()));
    }
    Ok(OpenLoopQuantities {
        g_vg: h.get(Output::OutputVoltage, Input::InputVoltage).clone(),
        z_in: h31.reciprocal()?,
        z_out: h.get(Output::OutputVoltage, Input::LoadCurrent).neg(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratfun::{poly_roots, rf_eval};

    fn conv1() -> ConverterParams {
        ConverterParams::new(100.0, 0.167e-3, 3.75e-6, Load::Resistive(5.0)).unwrap()
    }

    fn c0() -> Complex64 {
        Complex64::new(0.0, 0.0)
    }

    #[test]
    fn operating_point_half_duty() {
        let op = operating_point(&conv1(), 50.0).unwrap();
        assert_eq!(op, OperatingPoint { duty: 0.5, v_c: 50.0, i_l: 10.0 });
    }

    #[test]
    fn operating_point_zero_reference() {
        let op = operating_point(&conv1(), 0.0).unwrap();
        assert_eq!(op, OperatingPoint { duty: 0.0, v_c: 0.0, i_l: 0.0 });
    }

    #[test]
    fn operating_point_cannot_step_up() {
        let err = operating_point(&conv1(), 100.0).unwrap_err();
        assert!(err.to_string().contains("buck cannot step up"));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ConverterParams::new(100.0, -1.0, 1e-6, Load::OPEN).is_err());
        assert!(ConverterParams::new(0.0, 1e-3, 1e-6, Load::OPEN).is_err());
        assert!(ConverterParams::new(10.0, 1e-3, 1e-6, Load::Resistive(0.0)).is_err());
    }

    #[test]
    fn state_matrix_of_converter_one() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let ss = state_space(&p, &op, Feedthrough::Paper);
        assert_eq!(ss.a[(0, 0)], 0.0);
        assert!((ss.a[(0, 1)] + 5988.02).abs() < 1e-2);
        assert!((ss.a[(1, 0)] - 266666.7).abs() < 0.1);
        assert!((ss.a[(1, 1)] + 53333.3).abs() < 0.1);
        assert_eq!(ss.b, Matrix2x3::new(0.5 / p.l, 0.0, 100.0 / p.l, 0.0, -1.0 / p.c, 0.0));
        assert_eq!(ss.d, Matrix3::zeros());
        assert_eq!(ss.c[(2, 0)], 0.5);
    }

    #[test]
    fn open_load_has_no_damping_term() {
        let p = ConverterParams::new(100.0, 1e-4, 1e-6, Load::OPEN).unwrap();
        let op = operating_point_with_load(&p, 40.0, 2.0).unwrap();
        assert_eq!(op.i_l, 2.0);
        let ss = state_space(&p, &op, Feedthrough::Physical);
        assert_eq!(ss.a[(1, 1)], 0.0);
        assert_eq!(ss.d[(2, 2)], 2.0);
    }

    #[test]
    fn delta_of_converter_one() {
        let d = conv1().delta();
        assert_eq!(d.coeff(0), 5.0);
        assert_eq!(d.coeff(1), 1.67e-4);
        assert!((d.coeff(2) - 3.13125e-9).abs() < 1e-24);
    }

    #[test]
    fn dc_limits() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let h = tf_matrix(&p, &op, Feedthrough::Paper).unwrap();
        let at0 = |o, i| rf_eval(h.get(o, i), c0()).unwrap().re;
        assert!((at0(Output::OutputVoltage, Input::InputVoltage) - 0.5).abs() < 1e-15);
        assert!((at0(Output::OutputVoltage, Input::Duty) - 100.0).abs() < 1e-12);
        let ol = open_loop_quantities(&h).unwrap();
        assert!((rf_eval(&ol.z_in, c0()).unwrap().re - 20.0).abs() < 1e-12);
        assert_eq!(rf_eval(&ol.z_out, c0()).unwrap().norm(), 0.0);
    }

    #[test]
    fn input_current_row_is_duty_squared_times_rcs_plus_one() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let h = tf_matrix(&p, &op, Feedthrough::Paper).unwrap();
        let (l, c, r, d) = (p.l, p.c, 5.0, 0.5);
        let s = Complex64::new(120.0, 3.0e4);
        let want = d * d * (s * r * c + 1.0) / (s * s * l * r * c + s * l + r);
        let got = rf_eval(h.get(Output::InputCurrent, Input::InputVoltage), s).unwrap();
        assert!((got - want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn output_impedance_is_slr_over_delta() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let ol = open_loop_quantities(&tf_matrix(&p, &op, Feedthrough::Physical).unwrap()).unwrap();
        let s = Complex64::new(-50.0, 7.0e3);
        let want = s * p.l * 5.0 / p.delta().eval(s);
        assert!((rf_eval(&ol.z_out, s).unwrap() - want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn zero_duty_has_no_input_impedance() {
        let p = conv1();
        let op = operating_point(&p, 0.0).unwrap();
        let h = tf_matrix(&p, &op, Feedthrough::Paper).unwrap();
        assert!(open_loop_quantities(&h).is_err());
    }

    #[test]
    fn physical_feedthrough_adds_inductor_current() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let paper = tf_matrix(&p, &op, Feedthrough::Paper).unwrap();
        let phys = tf_matrix(&p, &op, Feedthrough::Physical).unwrap();
        let s = Complex64::new(10.0, 2.0e4);
        let diff = rf_eval(phys.get(Output::InputCurrent, Input::Duty), s).unwrap()
            - rf_eval(paper.get(Output::InputCurrent, Input::Duty), s).unwrap();
        assert!((diff - Complex64::new(10.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn poles_match_state_matrix_eigenvalues() {
        let p = conv1();
        let op = operating_point(&p, 50.0).unwrap();
        let ss = state_space(&p, &op, Feedthrough::Paper);
        let eig = ss.a.complex_eigenvalues();
        let roots = poly_roots(&p.delta()).unwrap().expanded();
        let eig: Vec<Complex64> = eig.iter().copied().collect();
        let dist = crate::max_matched_relative_distance(&roots, &eig, 1e-300).unwrap();
        assert!(dist < 1e-9, "{dist}");
    }
}
