//! System description files.

use std::fs;
use std::path::Path;

use buckstab::buck_model::{operating_point, ConverterParams, Feedthrough, Load};
use buckstab::cascade::{CascadeOptions, Stage1Load, Stage2Vin, StageSpec};
use buckstab::closed_loop::PiGains;
use buckstab::freqresp::SweepSpec;
use buckstab::timesim::{Event, InitialState};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A stage input voltage: volts, or the previous stage's regulated output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VinSpec {
    Volts(f64),
    Previous(FromPrevious),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FromPrevious {
    #[serde(rename = "from-previous")]
    FromPrevious,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub v_in: VinSpec,
    pub l: f64,
    pub c: f64,
    pub r_load: Load,
    pub v_ref: f64,
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Modes {
    pub feedthrough: Feedthrough,
    pub cascade_r1: Stage1Load,
    pub stage2_vin: Stage2Vin,
    pub ideal_source: bool,
}

/// Simulation settings; unset values are chosen from the closed-loop poles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimSettings {
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub events: Vec<Event>,
    pub initial_state: Option<InitialState>,
    pub saturation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub stages: Vec<StageConfig>,
    pub modes: Modes,
    pub sweep: SweepSpec,
    pub sim: SimSettings,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    stages: Option<Vec<RawStage>>,
    modes: Option<RawModes>,
    sweep: Option<RawSweep>,
    sim: Option<RawSim>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    v_in: Option<VinSpec>,
    l: Option<f64>,
    c: Option<f64>,
    r_load: Option<Load>,
    v_ref: Option<f64>,
    kp: Option<f64>,
    ki: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModes {
    feedthrough: Option<Feedthrough>,
    cascade_r1: Option<Stage1Load>,
    stage2_vin: Option<Stage2Vin>,
    ideal_source: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    f_min_hz: Option<f64>,
    f_max_hz: Option<f64>,
    points_per_decade: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    duration: Option<f64>,
    dt: Option<f64>,
    events: Option<Vec<Event>>,
    initial_state: Option<InitialState>,
    saturation: Option<bool>,
}

pub fn parse_config(path: &Path) -> Result<SystemConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<SystemConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config { path: if path == "." { String::new() } else { path }, msg: e.into_inner().to_string() }
    })?;
    raw.validate()
}

fn missing(path: String) -> CliError {
    CliError::Config { path, msg: "missing required field".into() }
}

fn invalid(path: String, msg: impl Into<String>) -> CliError {
    CliError::Config { path, msg: msg.into() }
}

impl RawConfig {
    fn validate(self) -> Result<SystemConfig, CliError> {
        let raw_stages = self.stages.ok_or_else(|| missing("stages".into()))?;
        if !(1..=2).contains(&raw_stages.len()) {
            return Err(invalid("stages".into(), format!("need 1 or 2 stages, got {}", raw_stages.len())));
        }
        let mut stages = Vec::new();
        for (k, s) in raw_stages.into_iter().enumerate() {
            let field = |name: &str| format!("stages[{k}].{name}");
            let req = |x: Option<f64>, name: &str| x.ok_or_else(|| missing(field(name)));
            let stage = StageConfig {
                v_in: s.v_in.ok_or_else(|| missing(field("v_in")))?,
                l: req(s.l, "l")?,
                c: req(s.c, "c")?,
                r_load: s.r_load.ok_or_else(|| missing(field("r_load")))?,
                v_ref: req(s.v_ref, "v_ref")?,
                kp: req(s.kp, "kp")?,
                ki: req(s.ki, "ki")?,
            };
            for (name, x) in [("l", stage.l), ("c", stage.c)] {
                if !(x.is_finite() && x > 0.0) {
                    return Err(invalid(field(name), format!("must be positive, got {x}")));
                }
            }
            if let Load::Resistive(r) = stage.r_load {
                if !(r.is_finite() && r > 0.0) {
                    return Err(invalid(field("r_load"), format!("must be positive or \"open\", got {r}")));
                }
            }
            for (name, x) in [("v_ref", stage.v_ref), ("kp", stage.kp), ("ki", stage.ki)] {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(invalid(field(name), format!("must be non-negative, got {x}")));
                }
            }
            PiGains::new(stage.kp, stage.ki).map_err(|e| invalid(format!("stages[{k}]"), e.to_string()))?;
            match stage.v_in {
                VinSpec::Volts(v) if !(v.is_finite() && v > 0.0) => {
                    return Err(invalid(field("v_in"), format!("must be positive, got {v}")));
                }
                VinSpec::Previous(_) if k == 0 => {
                    return Err(invalid(field("v_in"), "the first stage has no previous stage"));
                }
                _ => {}
            }
            stages.push(stage);
        }

        let modes = self.modes.map_or_else(Modes::default, |m| Modes {
            feedthrough: m.feedthrough.unwrap_or_default(),
            cascade_r1: m.cascade_r1.unwrap_or_default(),
            stage2_vin: m.stage2_vin.unwrap_or_default(),
            ideal_source: m.ideal_source.unwrap_or(false),
        });
        let defaults = SweepSpec::default();
        let sweep = self.sweep.map_or(defaults, |s| SweepSpec {
            f_min_hz: s.f_min_hz.unwrap_or(defaults.f_min_hz),
            f_max_hz: s.f_max_hz.unwrap_or(defaults.f_max_hz),
            points_per_decade: s.points_per_decade.unwrap_or(defaults.points_per_decade),
        });
        sweep.validate().map_err(|e| invalid("sweep".into(), e.to_string()))?;
        let sim = self.sim.map_or_else(
            || SimSettings { saturation: true, ..Default::default() },
            |s| SimSettings {
                duration: s.duration,
                dt: s.dt,
                events: s.events.unwrap_or_default(),
                initial_state: s.initial_state,
                saturation: s.saturation.unwrap_or(true),
            },
        );

        let cfg = SystemConfig { stages, modes, sweep, sim };
        for k in 0..cfg.stages.len() {
            let spec = cfg.stage_spec(k).map_err(|e| invalid(format!("stages[{k}]"), e.to_string()))?;
            operating_point(&spec.params, spec.v_ref)
                .map_err(|e| invalid(format!("stages[{k}].v_ref"), e.to_string()))?;
        }
        Ok(cfg)
    }
}

impl SystemConfig {
    /// Stage `k` (0-based) on its own, with `from-previous` resolved to the
    /// previous stage's reference.
    pub fn stage_spec(&self, k: usize) -> Result<StageSpec, buckstab::Error> {
        let s = &self.stages[k];
        let v_in = match s.v_in {
            VinSpec::Volts(v) => v,
            VinSpec::Previous(_) => self.stages[k - 1].v_ref,
        };
        Ok(StageSpec {
            params: ConverterParams::new(v_in, s.l, s.c, s.r_load)?,
            gains: PiGains::new(s.kp, s.ki)?,
            v_ref: s.v_ref,
        })
    }

    pub fn cascade_options(&self) -> CascadeOptions {
        let stage2_vin = match self.stages.get(1).map(|s| s.v_in) {
            Some(VinSpec::Previous(_)) => Stage2Vin::Cascade,
            _ => self.modes.stage2_vin,
        };
        CascadeOptions {
            feedthrough: self.modes.feedthrough,
            stage1_load: self.modes.cascade_r1,
            stage2_vin,
            ideal_source: self.modes.ideal_source,
        }
    }
}
