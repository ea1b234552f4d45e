//! Two closed-loop converters in cascade: minor-loop gain, total voltage
//! gain and stability verdicts.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buck_model::{
    operating_point, operating_point_with_load, tf_matrix, ConverterParams, Feedthrough, Load, OperatingPoint,
    TransferMatrix,
};
use crate::closed_loop::{close_loop, closed_loop_state_matrix, stage_report, ClosedLoopSet, PiGains, StageReport};
use crate::eigen::eigenvalues;
use crate::error::{Error, Result};
use crate::freqresp::{log_grid, nyquist_winding, sample, SweepSpec};
use crate::ratfun::{classify_spectrum, hurwitz_stable, poly_roots, Polynomial, RationalFunction, Stability};

const GOLDEN_ITERATIONS: usize = 80;
const REFINED_PEAKS: usize = 3;

/// One converter as described by the user, before cascade adjustments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub params: ConverterParams,
    pub gains: PiGains,
    pub v_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Load {
    #[default]
    Open,
    Present,
}

/// Input voltage at which stage 2 is linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage2Vin {
    /// Stage 1's regulated output.
    #[default]
    Cascade,
    /// Stage 2's own `v_in`.
    Standalone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CascadeOptions {
    pub feedthrough: Feedthrough,
    pub stage1_load: Stage1Load,
    pub stage2_vin: Stage2Vin,
    /// Treats stage 1 as an ideal source: its output impedance is zero.
    pub ideal_source: bool,
}

/// A stage as linearized inside the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub params: ConverterParams,
    pub gains: PiGains,
    pub op: OperatingPoint,
    pub tf: TransferMatrix,
    pub closed: ClosedLoopSet,
    /// The stage on its own: stage 1 with its configured load at its own
    /// input, stage 2 at its cascade linearization.
    pub standalone: StageReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub stage1: CascadeStage,
    pub stage2: CascadeStage,
    /// `z_out_cl1 / z_in_cl2`.
    pub minor_loop: RationalFunction,
    /// `g_vg_cl1 g_vg_cl2 / (1 + minor_loop)`.
    pub total_gain: RationalFunction,
    pub options: CascadeOptions,
}

pub fn build_cascade(s1: &StageSpec, s2: &StageSpec, options: CascadeOptions) -> Result<CascadeModel> {
    s1.params.validate()?;
    s2.params.validate()?;
    if s1.v_ref >= s1.params.v_in {
        return Err(Error::CannotStepUp { v_ref: s1.v_ref, v_in: s1.params.v_in });
    }
    if s2.v_ref >= s1.v_ref {
        return Err(Error::InvalidCascade(format!(
            "stage 2 v_ref = {} V must be below stage 1 v_ref = {} V",
            s2.v_ref, s1.v_ref
        )));
    }
    let ft = options.feedthrough;

    let mut p2 = s2.params;
    if options.stage2_vin == Stage2Vin::Cascade {
        p2.v_in = s1.v_ref;
    }
    let op2 = operating_point(&p2, s2.v_ref)?;
    let tf2 = tf_matrix(&p2, &op2, ft)?;
    let cl2 = close_loop(&tf2, &s2.gains)?;
    let standalone2 = stage_report(&p2, &op2, &cl2)?;

    let mut p1 = s1.params;
    if options.stage1_load == Stage1Load::Open {
        p1.load = Load::OPEN;
    }
    let op1 = operating_point_with_load(&p1, s1.v_ref, op2.duty * op2.i_l)?;
    let tf1 = tf_matrix(&p1, &op1, ft)?;
    let cl1 = close_loop(&tf1, &s1.gains)?;
    let standalone1 = {
        let op = operating_point(&s1.params, s1.v_ref)?;
        let cl = close_loop(&tf_matrix(&s1.params, &op, ft)?, &s1.gains)?;
        stage_report(&s1.params, &op, &cl)?
    };

    let minor_loop = if options.ideal_source { RationalFunction::zero() } else { cl1.z_out.div(&cl2.z_in)? };
    let total_gain = cl1.g_vg.mul(&cl2.g_vg)?.div(&RationalFunction::one().add(&minor_loop)?)?;

    Ok(CascadeModel {
        stage1: CascadeStage { params: p1, gains: s1.gains, op: op1, tf: tf1, closed: cl1, standalone: standalone1 },
        stage2: CascadeStage { params: p2, gains: s2.gains, op: op2, tf: tf2, closed: cl2, standalone: standalone2 },
        minor_loop,
        total_gain,
        options,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiddlebrookResult {
    pub worst_ratio: f64,
    pub worst_freq_hz: f64,
    /// `worst_ratio < 1`; equality counts as a violation.
    pub satisfied: bool,
}

pub fn middlebrook_check(m: &CascadeModel, grid: &SweepSpec) -> Result<MiddlebrookResult> {
    let (worst_ratio, worst_freq_hz) = peak_magnitude(&m.minor_loop, grid)?;
    Ok(MiddlebrookResult { worst_ratio, worst_freq_hz, satisfied: worst_ratio < 1.0 })
}

/// Largest `|f(j 2 pi f)|` over the grid, refined by golden-section search
/// around the highest local maxima. Returns `(peak, frequency_hz)`.
pub fn peak_magnitude(f: &RationalFunction, grid: &SweepSpec) -> Result<(f64, f64)> {
    grid.validate()?;
    let freqs = log_grid(grid.f_min_hz, grid.f_max_hz, grid.points_per_decade);
    let mags: Vec<f64> = freqs.par_iter().map(|hz| sample(f, *hz).map(|s| s.1.norm())).collect::<Result<_>>()?;
    let n = freqs.len();

    let mut peaks: Vec<usize> =
        (0..n).filter(|&i| (i == 0 || mags[i] >= mags[i - 1]) && (i == n - 1 || mags[i] >= mags[i + 1])).collect();
    peaks.sort_by(|a, b| mags[*b].total_cmp(&mags[*a]).then(a.cmp(b)));
    peaks.truncate(REFINED_PEAKS);

    let mut best = (mags[0], freqs[0]);
    for &i in &peaks {
        let candidate =
            if i == 0 || i == n - 1 { (mags[i], freqs[i]) } else { golden_max(f, freqs[i - 1], freqs[i + 1])? };
        let candidate = if candidate.0 >= mags[i] { candidate } else { (mags[i], freqs[i]) };
        if candidate.0 > best.0 {
            best = candidate;
        }
    }
    Ok(best)
}

fn golden_max(f: &RationalFunction, lo_hz: f64, hi_hz: f64) -> Result<(f64, f64)> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mag = |u: f64| sample(f, u.exp()).map(|s| s.1.norm());
    let (mut a, mut b) = (lo_hz.ln(), hi_hz.ln());
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (mag(c)?, mag(d)?);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = mag(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = mag(d)?;
        }
    }
    let u = 0.5 * (a + b);
    Ok((mag(u)?, u.exp()))
}

/// Verdicts in the two feedthrough modes for the same cascade description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub paper: Stability,
    pub physical: Stability,
    pub disagree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub options: CascadeOptions,
    /// Stage summaries as linearized in the cascade.
    pub stages: Vec<StageReport>,
    /// Stage summaries on their own.
    pub standalone: Vec<StageReport>,
    pub standalone_verdicts: Vec<Stability>,
    pub middlebrook: MiddlebrookResult,
    pub exact_verdict: Stability,
    pub exact_max_real_part: f64,
    /// Denominator of the total gain, ascending powers, monic.
    pub total_gain_den: Polynomial,
    pub cascade_poles: Vec<Complex64>,
    /// Verdict from the eigenvalues of the composed state matrix.
    pub composed_verdict: Stability,
    pub composed_max_real_part: f64,
    pub nyquist_winding: i64,
    /// Right half-plane poles of the minor-loop gain.
    pub minor_loop_rhp_poles: usize,
    /// Right half-plane zeros of `1 + minor_loop`.
    pub return_difference_rhp_zeros: usize,
    /// `nyquist_winding + minor_loop_rhp_poles == return_difference_rhp_zeros`.
    pub nyquist_consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_comparison: Option<ModeComparison>,
}

impl StabilityReport {
    /// True when every verdict in the report is stable.
    pub fn is_stable(&self) -> bool {
        self.exact_verdict.is_stable()
    }
}

/// Exact pole verdict with Middlebrook and Nyquist cross-checks.
pub fn exact_cascade_verdict(m: &CascadeModel, grid: &SweepSpec) -> Result<StabilityReport> {
    let standalone_verdicts = vec![m.stage1.standalone.verdict, m.stage2.standalone.verdict];
    if let Some(k) = standalone_verdicts.iter().position(|v| !v.is_stable()) {
        return Err(Error::MinorLoopInapplicable(format!("stage {} is not stable on its own", k + 1)));
    }

    let den = m.total_gain.den().clone();
    let exact = hurwitz_stable(&den)?;
    let cascade_poles = poly_roots(&den)?.expanded();

    let eig = eigenvalues(&compose_state_space(m, false))?;
    let composed = classify_spectrum(&eig);

    let (winding, p_rhp, z_rhp) = if m.minor_loop.is_zero() {
        (0, 0, 0)
    } else {
        let winding = nyquist_winding(&m.minor_loop, Complex64::new(-1.0, 0.0))?;
        let p = classify_spectrum(&m.minor_loop.poles()?.expanded()).rhp_count;
        let rd = RationalFunction::one().add(&m.minor_loop)?;
        let z =
            if rd.num().degree().unwrap_or(0) == 0 { 0 } else { classify_spectrum(&rd.zeros()?.expanded()).rhp_count };
        (winding, p, z)
    };

    let stages =
        [&m.stage1, &m.stage2].iter().map(|s| stage_report(&s.params, &s.op, &s.closed)).collect::<Result<Vec<_>>>()?;

    Ok(StabilityReport {
        options: m.options,
        stages,
        standalone: vec![m.stage1.standalone.clone(), m.stage2.standalone.clone()],
        standalone_verdicts,
        middlebrook: middlebrook_check(m, grid)?,
        exact_verdict: exact.verdict,
        exact_max_real_part: exact.max_real_part,
        total_gain_den: den,
        cascade_poles,
        composed_verdict: composed.verdict,
        composed_max_real_part: composed.max_real_part,
        nyquist_winding: winding,
        minor_loop_rhp_poles: p_rhp,
        return_difference_rhp_zeros: z_rhp,
        nyquist_consistent: winding + p_rhp as i64 == z_rhp as i64,
        mode_comparison: None,
    })
}

/// Runs the analysis in `options.feedthrough` and records the verdict of
/// the other feedthrough mode alongside.
pub fn analyze_cascade(
    s1: &StageSpec,
    s2: &StageSpec,
    options: CascadeOptions,
    grid: &SweepSpec,
) -> Result<StabilityReport> {
    let model = build_cascade(s1, s2, options)?;
    let mut report = exact_cascade_verdict(&model, grid)?;
    let other_ft = match options.feedthrough {
        Feedthrough::Paper => Feedthrough::Physical,
        Feedthrough::Physical => Feedthrough::Paper,
    };
    let other = build_cascade(s1, s2, CascadeOptions { feedthrough: other_ft, ..options })?;
    let other_verdict = hurwitz_stable(other.total_gain.den())?.verdict;
    let (paper, physical) = match options.feedthrough {
        Feedthrough::Paper => (report.exact_verdict, other_verdict),
        Feedthrough::Physical => (other_verdict, report.exact_verdict),
    };
    report.mode_comparison = Some(ModeComparison { paper, physical, disagree: paper != physical });
    Ok(report)
}

/// Small-signal state matrix of the closed-loop cascade with states
/// `(i_l1, v_c1, z1, i_l2, v_c2, z2)`, `z` being the integrated voltage
/// error of each stage.
///
/// With `decouple` the back-action of stage 2's input current on stage 1
/// is dropped, leaving a block-triangular matrix.
pub fn compose_state_space(m: &CascadeModel, decouple: bool) -> DMatrix<f64> {
    let (p1, p2) = (&m.stage1.params, &m.stage2.params);
    let (g1, g2) = (&m.stage1.gains, &m.stage2.gains);
    let mut a = DMatrix::<f64>::zeros(6, 6);
    a.view_mut((0, 0), (3, 3)).copy_from(&closed_loop_state_matrix(p1, g1));
    a.view_mut((3, 3), (3, 3)).copy_from(&closed_loop_state_matrix(p2, g2));

    // stage 2 sees v_c1 as its input voltage
    a[(3, 1)] = m.stage2.op.duty / p2.l;

    if !(decouple || m.options.ideal_source) {
        // i_in2 = D2 i_l2 + I_L2 d2, d2 = -kp2 v_c2 + ki2 z2
        let (d2, il2) = (m.stage2.op.duty, m.stage2.op.i_l);
        let c1 = p1.c;
        a[(1, 3)] -= d2 / c1;
        if m.options.feedthrough == Feedthrough::Physical {
            a[(1, 4)] += il2 * g2.kp / c1;
            a[(1, 5)] -= il2 * g2.ki / c1;
        }
    }
    a
}
