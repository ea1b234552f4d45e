//! Nonlinear averaged time-domain simulation of one or two PI-controlled
//! buck converters, integrated with fixed-step RK4.

use std::f64::consts::TAU;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::buck_model::{ConverterParams, Feedthrough, OperatingPoint};
use crate::cascade::CascadeModel;
use crate::closed_loop::PiGains;
use crate::error::{Error, Result};

/// A state beyond this multiple of its operating scale ends the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Default samples per period of the fastest stage resonance.
pub const SAMPLES_PER_PERIOD: f64 = 100.0;
/// Coarsest allowed step, in samples per period of the fastest resonance.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 50.0;
/// Converged when the last-quartile deviation stays below this fraction
/// of the operating value.
pub const CONVERGED_FRACTION: f64 = 5e-3;
const MIN_TRACE_SAMPLES: usize = 100;
const MAX_AUTO_STEPS: f64 = 2e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Adds `magnitude` volts to the stage's reference.
    ReferenceStep,
    /// Adds `magnitude` volts to stage 1's input voltage.
    InputStep,
    /// Adds `magnitude` amperes of external load current at the stage output.
    LoadStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub magnitude: f64,
    /// 1-based stage index.
    #[serde(default = "first_stage")]
    pub stage: usize,
}

fn first_stage() -> usize {
    1
}

/// Per-stage `[i_l, v_c, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    AtEquilibrium,
    Zero,
    Explicit(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<Event>,
    pub initial_state: InitialState,
    /// Clamp the duty cycle to [0, 1] with conditional integration.
    #[serde(default = "yes")]
    pub saturation: bool,
}

fn yes() -> bool {
    true
}

impl SimConfig {
    /// Step of `1 / (100 f0_max)`; duration covers 20 periods of the
    /// slowest mode and ten time constants of the least damped one.
    pub fn auto(poles: &[Complex64], f0_max_hz: f64) -> Self {
        let dt = 1.0 / (SAMPLES_PER_PERIOD * f0_max_hz);
        let slowest = poles.iter().map(|p| p.norm()).filter(|m| *m > 0.0).fold(f64::INFINITY, f64::min);
        let least_damped = poles.iter().map(|p| p.re.abs()).filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
        let mut duration = 1000.0 * dt;
        if slowest.is_finite() {
            duration = duration.max(20.0 * TAU / slowest);
        }
        if least_damped.is_finite() {
            duration = duration.max(10.0 / least_damped);
        }
        duration = duration.min(MAX_AUTO_STEPS * dt);
        Self { duration, dt, events: Vec::new(), initial_state: InitialState::AtEquilibrium, saturation: true }
    }

    fn validate(&self, f0_max_hz: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSimConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration.is_finite() && self.dt <= self.duration / 1000.0) {
            return bad(format!("dt = {} must be at most duration / 1000 = {}", self.dt, self.duration / 1000.0));
        }
        let dt_max = 1.0 / (MIN_SAMPLES_PER_PERIOD * f0_max_hz);
        if self.dt > dt_max * (1.0 + 1e-12) {
            return bad(format!("dt = {} exceeds 1/(50 f0_max) = {dt_max}", self.dt));
        }
        for e in &self.events {
            if !(e.time.is_finite() && e.time >= 0.0 && e.magnitude.is_finite()) {
                return bad(format!("event at t = {} has an invalid time or magnitude", e.time));
            }
        }
        Ok(())
    }
}

/// A converter with its controller, as simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStage {
    pub params: ConverterParams,
    pub gains: PiGains,
    pub v_ref: f64,
    /// Holds the duty at this value instead of running the controller.
    #[serde(default)]
    pub frozen_duty: Option<f64>,
}

/// Current drawn from stage 1 by stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// `d2 i_l2` with the instantaneous duty.
    #[default]
    Exact,
    /// `D2 i_l2` with the equilibrium duty.
    Paper,
}

impl From<Feedthrough> for Coupling {
    fn from(f: Feedthrough) -> Self {
        match f {
            Feedthrough::Physical => Coupling::Exact,
            Feedthrough::Paper => Coupling::Paper,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub i_l: Vec<f64>,
    pub v_c: Vec<f64>,
    pub duty: Vec<f64>,
    pub integ: Vec<f64>,
    pub i_in: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub time: Vec<f64>,
    pub stages: Vec<StageTrace>,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        const COLS: [&str; 5] = ["i_l_a", "v_c_v", "duty", "integ_vs", "i_in_a"];
        let mut header = vec!["time_s".to_string()];
        for k in 0..self.stages.len() {
            for c in COLS {
                header.push(if self.stages.len() == 1 { c.to_string() } else { format!("s{}_{c}", k + 1) });
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.time[i])?;
            for s in &self.stages {
                for x in [s.i_l[i], s.v_c[i], s.duty[i], s.integ[i], s.i_in[i]] {
                    write!(w, ",{x:.16e}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn simulate_single(p: &ConverterParams, g: &PiGains, v_ref: f64, cfg: &SimConfig) -> Result<SimTrace> {
    let stage = SimStage { params: *p, gains: *g, v_ref, frozen_duty: None };
    Engine::new(vec![stage], Coupling::Exact, cfg)?.run(cfg)
}

/// Stage 2 is supplied by stage 1's output voltage; its own `v_in` is ignored.
pub fn simulate_cascade(s1: &SimStage, s2: &SimStage, coupling: Coupling, cfg: &SimConfig) -> Result<SimTrace> {
    Engine::new(vec![*s1, *s2], coupling, cfg)?.run(cfg)
}

/// Simulates the cascade as linearized in `model`, with the coupling law
/// matching its feedthrough mode.
pub fn simulate_model(model: &CascadeModel, cfg: &SimConfig) -> Result<SimTrace> {
    let stage = |s: &crate::cascade::CascadeStage, v_ref: f64| SimStage {
        params: s.params,
        gains: s.gains,
        v_ref,
        frozen_duty: None,
    };
    simulate_cascade(
        &stage(&model.stage1, model.stage1.op.v_c),
        &stage(&model.stage2, model.stage2.op.v_c),
        model.options.feedthrough.into(),
        cfg,
    )
}

/// Fastest stage resonance in hertz.
pub fn f0_max_hz(params: &[ConverterParams]) -> f64 {
    params.iter().map(|p| p.natural_frequency() / TAU).fold(0.0, f64::max)
}

const N_STATES: usize = 3;

struct Engine {
    stages: Vec<SimStage>,
    coupling: Coupling,
    /// Equilibrium duty of stage 2, used by the paper coupling law.
    d2_eq: f64,
    v_in: f64,
    v_ref: Vec<f64>,
    i_ext: Vec<f64>,
    saturation: bool,
    scales: Vec<(f64, f64)>,
}

impl Engine {
    fn new(stages: Vec<SimStage>, coupling: Coupling, cfg: &SimConfig) -> Result<Self> {
        for s in &stages {
            s.params.validate()?;
            if s.frozen_duty.is_none() {
                s.gains.validate()?;
            }
            if !(s.v_ref.is_finite() && s.v_ref >= 0.0) {
                return Err(Error::InvalidParameter {
                    field: "v_ref",
                    reason: format!("must be non-negative, got {}", s.v_ref),
                });
            }
        }
        cfg.validate(f0_max_hz(&stages.iter().map(|s| s.params).collect::<Vec<_>>()))?;
        for e in &cfg.events {
            if e.stage == 0 || e.stage > stages.len() {
                return Err(Error::InvalidSimConfig(format!("event stage {} out of range", e.stage)));
            }
            if e.kind == EventKind::InputStep && e.stage != 1 {
                return Err(Error::InvalidSimConfig("input steps apply to stage 1 only".into()));
            }
        }
        let v_in = stages[0].params.v_in;
        let mut engine = Self {
            v_ref: stages.iter().map(|s| s.v_ref).collect(),
            i_ext: vec![0.0; stages.len()],
            stages,
            coupling,
            d2_eq: 0.0,
            v_in,
            saturation: cfg.saturation,
            scales: Vec::new(),
        };
        if engine.stages.len() == 2 {
            engine.d2_eq = engine.stages[1].frozen_duty.unwrap_or(engine.stages[1].v_ref / engine.stages[0].v_ref);
        }
        let mut v_supply = v_in;
        for s in &engine.stages {
            let z0 = (s.params.l / s.params.c).sqrt();
            let v_scale = v_supply.max(s.v_ref).max(f64::MIN_POSITIVE);
            let i_scale = (v_scale * s.params.conductance()).max(v_scale / z0);
            engine.scales.push((i_scale, v_scale));
            v_supply = s.v_ref;
        }
        Ok(engine)
    }

    fn equilibrium(&self) -> Result<Vec<f64>> {
        let n = self.stages.len();
        let mut x = vec![0.0; N_STATES * n];
        let mut v_supply = self.v_in;
        for (k, s) in self.stages.iter().enumerate() {
            if s.v_ref >= v_supply && s.frozen_duty.is_none() {
                return Err(Error::CannotStepUp { v_ref: s.v_ref, v_in: v_supply });
            }
            let (d, v, z) = match s.frozen_duty {
                Some(f) => (f, f * v_supply, 0.0),
                None if s.gains.ki > 0.0 => (s.v_ref / v_supply, s.v_ref, s.v_ref / v_supply / s.gains.ki),
                None => {
                    if n > 1 {
                        return Err(Error::InvalidSimConfig(
                            "equilibrium start needs integral action in a cascade".into(),
                        ));
                    }
                    let d = s.gains.kp * s.v_ref / (1.0 + s.gains.kp * v_supply);
                    (d, d * v_supply, 0.0)
                }
            };
            x[N_STATES * k + 1] = v;
            x[N_STATES * k + 2] = z;
            x[N_STATES * k] = v * s.params.conductance() + self.i_ext[k];
            if k == 1 {
                // stage 1 also supplies stage 2's input current
                x[0] += d * x[N_STATES];
            }
            v_supply = v;
        }
        Ok(x)
    }

    /// Duty and integrator derivative of stage `k`.
    fn control(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let s = &self.stages[k];
        if let Some(f) = s.frozen_duty {
            return (f, 0.0);
        }
        let e = self.v_ref[k] - x[N_STATES * k + 1];
        let u = s.gains.kp * e + s.gains.ki * x[N_STATES * k + 2];
        if !self.saturation {
            return (u, e);
        }
        let deepening = (u > 1.0 && e > 0.0) || (u < 0.0 && e < 0.0);
        (u.clamp(0.0, 1.0), if deepening { 0.0 } else { e })
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.stages.len();
        let mut duty = [0.0; 2];
        for k in 0..n {
            let (d, dz) = self.control(k, x);
            duty[k] = d;
            dx[N_STATES * k + 2] = dz;
        }
        for k in 0..n {
            let p = &self.stages[k].params;
            let (i, v) = (x[N_STATES * k], x[N_STATES * k + 1]);
            let supply = if k == 0 { self.v_in } else { x[1] };
            let mut i_out = v * p.conductance() + self.i_ext[k];
            if k == 0 && n == 2 {
                let d2 = match self.coupling {
                    Coupling::Exact => duty[1],
                    Coupling::Paper => self.d2_eq,
                };
                i_out += d2 * x[N_STATES];
            }
            dx[N_STATES * k] = (duty[k] * supply - v) / p.l;
            dx[N_STATES * k + 1] = (i - i_out) / p.c;
        }
    }

    fn rk4(&self, x: &mut [f64], dt: f64) {
        let m = x.len();
        let mut k1 = vec![0.0; m];
        let mut k2 = vec![0.0; m];
        let mut k3 = vec![0.0; m];
        let mut k4 = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        self.rhs(x, &mut k1);
        for j in 0..m {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        self.rhs(&tmp, &mut k2);
        for j in 0..m {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        self.rhs(&tmp, &mut k3);
        for j in 0..m {
            tmp[j] = x[j] + dt * k3[j];
        }
        self.rhs(&tmp, &mut k4);
        for j in 0..m {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    fn apply(&mut self, e: &Event) {
        let k = e.stage - 1;
        match e.kind {
            EventKind::ReferenceStep => self.v_ref[k] += e.magnitude,
            EventKind::InputStep => self.v_in += e.magnitude,
            EventKind::LoadStep => self.i_ext[k] += e.magnitude,
        }
    }

    fn out_of_bounds(&self, x: &[f64]) -> bool {
        x.iter().any(|v| !v.is_finite())
            || self.scales.iter().enumerate().any(|(k, (i_s, v_s))| {
                x[N_STATES * k].abs() > DIVERGENCE_FACTOR * i_s || x[N_STATES * k + 1].abs() > DIVERGENCE_FACTOR * v_s
            })
    }

    fn record(&self, t: f64, x: &[f64], trace: &mut SimTrace) {
        trace.time.push(t);
        for (k, st) in trace.stages.iter_mut().enumerate() {
            let (d, _) = self.control(k, x);
            let i = x[N_STATES * k];
            st.i_l.push(i);
            st.v_c.push(x[N_STATES * k + 1]);
            st.duty.push(d);
            st.integ.push(x[N_STATES * k + 2]);
            st.i_in.push(d * i);
        }
    }

    fn run(mut self, cfg: &SimConfig) -> Result<SimTrace> {
        let n = self.stages.len();
        let mut x = match &cfg.initial_state {
            InitialState::AtEquilibrium => self.equilibrium()?,
            InitialState::Zero => vec![0.0; N_STATES * n],
            InitialState::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::InvalidSimConfig(format!(
                        "explicit initial state needs {n} stages, got {}",
                        v.len()
                    )));
                }
                v.iter().flatten().copied().collect()
            }
        };
        let mut events = cfg.events.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut next_event = 0;

        let steps = (cfg.duration / cfg.dt).round() as usize;
        let mut trace = SimTrace {
            time: Vec::with_capacity(steps + 1),
            stages: vec![StageTrace::default(); n],
            diverged: false,
            diverged_at: None,
        };
        for step in 0..=steps {
            let t = step as f64 * cfg.dt;
            while next_event < events.len() && events[next_event].time <= t + 0.5 * cfg.dt {
                self.apply(&events[next_event]);
                next_event += 1;
            }
            self.record(t, &x, &mut trace);
            if self.out_of_bounds(&x) {
                trace.diverged = true;
                trace.diverged_at = Some(t);
                break;
            }
            if step < steps {
                self.rk4(&mut x, cfg.dt);
            }
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceVerdict {
    Converged,
    Oscillating,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: TraceVerdict,
    /// Time after which the deviation stays within the convergence band.
    pub settling_time: Option<f64>,
    /// Slope of the log deviation envelope (1/s).
    pub envelope_growth_rate: f64,
}

/// Classifies a trace against the expected output voltage of each stage.
///
/// The signal is the largest relative output-voltage deviation across
/// stages; its envelope comes from the local maxima.
pub fn classify_trace(t: &SimTrace, targets: &[OperatingPoint]) -> Result<Classification> {
    if targets.len() != t.stages.len() {
        return Err(Error::InvalidSimConfig(format!("{} targets for {} stages", targets.len(), t.stages.len())));
    }
    if t.len() < MIN_TRACE_SAMPLES && !t.diverged {
        return Err(Error::TraceTooShort(format!("{} samples, need at least {MIN_TRACE_SAMPLES}", t.len())));
    }
    let dev: Vec<f64> = (0..t.len())
        .map(|i| {
            t.stages
                .iter()
                .zip(targets)
                .map(|(s, op)| (s.v_c[i] - op.v_c).abs() / op.v_c.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max)
        })
        .collect();

    let growth = envelope_slope(&t.time, &dev);
    let window = t.time.last().copied().unwrap_or(0.0) - t.time[0];

    let settling_time = match dev.iter().rposition(|d| *d >= CONVERGED_FRACTION) {
        None => Some(t.time[0]),
        Some(i) if i + 1 < t.len() => Some(t.time[i + 1]),
        Some(_) => None,
    };
    let tail = &dev[3 * dev.len() / 4..];
    let tail_max = tail.iter().copied().fold(0.0, f64::max);

    let verdict = if t.diverged || (growth * window >= std::f64::consts::LN_2 && tail_max >= 1e-9) {
        TraceVerdict::Diverged
    } else if tail_max < CONVERGED_FRACTION {
        TraceVerdict::Converged
    } else {
        TraceVerdict::Oscillating
    };
    Ok(Classification {
        verdict,
        settling_time: if verdict == TraceVerdict::Converged { settling_time } else { None },
        envelope_growth_rate: growth,
    })
}

/// Least-squares slope of `ln` of the local maxima of `x` against time.
fn envelope_slope(time: &[f64], x: &[f64]) -> f64 {
    let floor = 1e-12;
    let peaks: Vec<(f64, f64)> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > floor)
        .map(|i| (time[i], x[i].ln()))
        .collect();
    if peaks.len() < 2 {
        // monotone signal: compare the ends
        let (a, b) = (x[0].max(floor), x[x.len() - 1].max(floor));
        let span = time[time.len() - 1] - time[0];
        return if span > 0.0 && x.len() > 1 { (b / a).ln() / span } else { 0.0 };
    }
    let n = peaks.len() as f64;
    let mt = peaks.iter().map(|p| p.0).sum::<f64>() / n;
    let my = peaks.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buck_model::Load;

    fn conv1() -> (ConverterParams, PiGains) {
        (
            ConverterParams::new(100.0, 1.67e-4, 3.75e-6, Load::Resistive(5.0)).unwrap(),
            PiGains::new(0.0093602, 275.3).unwrap(),
        )
    }

    fn cfg(p: &[ConverterParams], duration: f64) -> SimConfig {
        let f0 = f0_max_hz(p);
        SimConfig {
            duration,
            dt: 1.0 / (SAMPLES_PER_PERIOD * f0),
            events: Vec::new(),
            initial_state: InitialState::AtEquilibrium,
            saturation: true,
        }
    }

    fn synthetic(time: Vec<f64>, v: Vec<f64>) -> SimTrace {
        let n = v.len();
        SimTrace {
            time,
            stages: vec![StageTrace {
                i_l: vec![0.0; n],
                v_c: v,
                duty: vec![0.0; n],
                integ: vec![0.0; n],
                i_in: vec![0.0; n],
            }],
            diverged: false,
            diverged_at: None,
        }
    }

    fn op(v: f64) -> OperatingPoint {
        OperatingPoint { duty: 0.5, v_c: v, i_l: 0.0 }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (p, g) = conv1();
        let tr = simulate_single(&p, &g, 50.0, &cfg(&[p], 5e-3)).unwrap();
        let s = &tr.stages[0];
        for i in 0..tr.len() {
            assert!((s.v_c[i] - 50.0).abs() <= 1e-9 * 50.0);
            assert!((s.i_l[i] - 10.0).abs() <= 1e-9 * 10.0);
            assert!((s.integ[i] - 0.5 / 275.3).abs() <= 1e-9 * 0.5 / 275.3);
        }
    }

    #[test]
    fn settles_from_zero() {
        let (p, g) = conv1();
        let mut c = cfg(&[p], 0.05);
        c.initial_state = InitialState::Zero;
        let tr = simulate_single(&p, &g, 50.0, &c).unwrap();
        let v = *tr.stages[0].v_c.last().unwrap();
        assert!((v - 50.0).abs() < 0.05, "{v}");
        for (d, (i, ii)) in tr.stages[0].duty.iter().zip(tr.stages[0].i_l.iter().zip(&tr.stages[0].i_in)) {
            assert!((0.0..=1.0).contains(d));
            assert_eq!(*ii, d * i);
        }
        let c = classify_trace(&tr, &[op(50.0)]).unwrap();
        assert_eq!(c.verdict, TraceVerdict::Converged);
    }

    #[test]
    fn anti_windup_bounds_integrator() {
        let (p, g) = conv1();
        // unreachable reference holds the duty at 1
        let mut c = cfg(&[p], 0.01);
        c.initial_state = InitialState::Zero;
        c.events.push(Event { time: 0.0, kind: EventKind::ReferenceStep, magnitude: 100.0, stage: 1 });
        let tr = simulate_single(&p, &g, 50.0, &c).unwrap();
        let z_max = tr.stages[0].integ.iter().copied().fold(0.0, f64::max);
        assert!(z_max < 1.0 / 275.3 + 1e-3, "{z_max}");
    }

    #[test]
    fn config_validation() {
        let (p, g) = conv1();
        let mut c = cfg(&[p], 1e-3);
        c.dt *= 3.0;
        assert!(matches!(simulate_single(&p, &g, 50.0, &c), Err(Error::InvalidSimConfig(_))));
        let mut c = cfg(&[p], 1e-3);
        c.duration = c.dt * 10.0;
        assert!(simulate_single(&p, &g, 50.0, &c).is_err());
        let mut c = cfg(&[p], 1e-2);
        c.events.push(Event { time: 0.0, kind: EventKind::LoadStep, magnitude: 1.0, stage: 2 });
        assert!(simulate_single(&p, &g, 50.0, &c).is_err());
    }

    #[test]
    fn frozen_downstream_duty_decouples() {
        let (p1, g1) = conv1();
        let p2 = ConverterParams::new(50.0, 3e-6, 2.344e-5, Load::Resistive(0.8)).unwrap();
        let g2 = PiGains::new(0.01956, 537.4).unwrap();
        let s1 = SimStage { params: p1, gains: g1, v_ref: 50.0, frozen_duty: None };
        let s2 = SimStage { params: p2, gains: g2, v_ref: 25.0, frozen_duty: Some(0.5) };
        let mut c = cfg(&[p1, p2], 0.02);
        c.events.push(Event { time: 1e-3, kind: EventKind::ReferenceStep, magnitude: 0.5, stage: 1 });
        let tr = simulate_cascade(&s1, &s2, Coupling::Exact, &c).unwrap();
        let targets = [op(50.5), op(25.25)];
        assert_eq!(classify_trace(&tr, &targets).unwrap().verdict, TraceVerdict::Converged);
    }

    #[test]
    fn csv_headers() {
        let (p, g) = conv1();
        let tr = simulate_single(&p, &g, 50.0, &cfg(&[p], 2e-3)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("time_s,i_l_a,v_c_v,duty,integ_vs,i_in_a"));
        assert_eq!(text.lines().count(), tr.len() + 1);

        let mut two = tr.clone();
        two.stages.push(tr.stages[0].clone());
        let mut buf = Vec::new();
        two.write_csv(&mut buf).unwrap();
        let head = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert!(head.starts_with("time_s,s1_i_l_a,s1_v_c_v,"));
        assert!(head.ends_with(",s2_integ_vs,s2_i_in_a"));
    }

    #[test]
    fn constant_trace_converges_immediately() {
        let time: Vec<f64> = (0..1000).map(|i| i as f64 * 1e-4).collect();
        let c = classify_trace(&synthetic(time, vec![5.0; 1000]), &[op(5.0)]).unwrap();
        assert_eq!(c.verdict, TraceVerdict::Converged);
        assert_eq!(c.settling_time, Some(0.0));
    }

    #[test]
    fn growing_oscillation_diverges_at_generating_rate() {
        let time: Vec<f64> = (0..20000).map(|i| i as f64 * 2.5e-6).collect();
        let v: Vec<f64> = time.iter().map(|t| 10.0 + 0.01 * (100.0 * t).exp() * (TAU * 1e3 * t).sin()).collect();
        let c = classify_trace(&synthetic(time, v), &[op(10.0)]).unwrap();
        assert_eq!(c.verdict, TraceVerdict::Diverged);
        assert!((c.envelope_growth_rate - 100.0).abs() < 5.0, "{}", c.envelope_growth_rate);
    }

    #[test]
    fn sinusoid_oscillates() {
        let time: Vec<f64> = (0..20000).map(|i| i as f64 * 2.5e-6).collect();
        let v: Vec<f64> = time.iter().map(|t| 10.0 + 0.5 * (TAU * 1e3 * t).sin()).collect();
        let c = classify_trace(&synthetic(time, v), &[op(10.0)]).unwrap();
        assert_eq!(c.verdict, TraceVerdict::Oscillating);
        assert!(c.envelope_growth_rate.abs() < 1.0);
    }

    #[test]
    fn short_trace_is_rejected() {
        let c = classify_trace(&synthetic(vec![0.0, 1.0], vec![1.0, 1.0]), &[op(1.0)]);
        assert!(matches!(c, Err(Error::TraceTooShort(_))));
    }

    #[test]
    fn auto_config_covers_slow_modes() {
        let poles = [Complex64::new(-100.0, 0.0), Complex64::new(-1e4, 3e4)];
        let c = SimConfig::auto(&poles, 1e4);
        assert_eq!(c.dt, 1e-6);
        assert!((c.duration - 20.0 * TAU / 100.0).abs() < 1e-12);
    }
}
