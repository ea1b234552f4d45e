//! Subcommand implementations. Each writes its files under `out` and
//! reports whether the analyzed system is stable.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use buckstab::buck_model::{open_loop_quantities, operating_point, tf_matrix, Feedthrough, OperatingPoint};
use buckstab::cascade::{analyze_cascade as cascade_report, build_cascade, StabilityReport};
use buckstab::closed_loop::{close_loop, stage_report, StageReport};
use buckstab::freqresp::sweep;
use buckstab::ratfun::{poly_roots, RationalFunction};
use buckstab::timesim::{
    classify_trace, f0_max_hz, simulate_cascade, simulate_single, Classification, EventKind, InitialState, SimConfig,
    SimStage,
};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Stable,
    Unstable,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Stable => 0,
            Outcome::Unstable => 2,
        }
    }

    fn from_all(stable: impl IntoIterator<Item = bool>) -> Self {
        if stable.into_iter().all(|s| s) {
            Outcome::Stable
        } else {
            Outcome::Unstable
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Quantity {
    #[value(name = "gvg_ol")]
    GvgOl,
    #[value(name = "gvg_cl")]
    GvgCl,
    #[value(name = "zin_ol")]
    ZinOl,
    #[value(name = "zin_cl")]
    ZinCl,
    #[value(name = "zout_ol")]
    ZoutOl,
    #[value(name = "zout_cl")]
    ZoutCl,
    #[value(name = "minor_loop")]
    MinorLoop,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::GvgOl,
        Quantity::GvgCl,
        Quantity::ZinOl,
        Quantity::ZinCl,
        Quantity::ZoutOl,
        Quantity::ZoutCl,
        Quantity::MinorLoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::GvgOl => "gvg_ol",
            Quantity::GvgCl => "gvg_cl",
            Quantity::ZinOl => "zin_ol",
            Quantity::ZinCl => "zin_cl",
            Quantity::ZoutOl => "zout_ol",
            Quantity::ZoutCl => "zout_cl",
            Quantity::MinorLoop => "minor_loop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReport {
    pub stage: usize,
    pub feedthrough: Feedthrough,
    #[serde(flatten)]
    pub report: StageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    #[serde(flatten)]
    pub classification: Classification,
    pub diverged_at: Option<f64>,
    pub targets_v: Vec<f64>,
    pub duration: f64,
    pub dt: f64,
    pub samples: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn stage_indices(cfg: &SystemConfig, stage: Option<usize>) -> Result<Vec<usize>, CliError> {
    match stage {
        None => Ok((0..cfg.stages.len()).collect()),
        Some(k) if (1..=cfg.stages.len()).contains(&k) => Ok(vec![k - 1]),
        Some(k) => Err(CliError::Usage(format!("--stage {k} out of range 1..={}", cfg.stages.len()))),
    }
}

/// Writes `single_stage<k>.json` for each selected stage.
pub fn analyze_single(cfg: &SystemConfig, stage: Option<usize>, out: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(out)?;
    let ft = cfg.modes.feedthrough;
    let mut verdicts = Vec::new();
    for k in stage_indices(cfg, stage)? {
        let spec = cfg.stage_spec(k)?;
        let op = operating_point(&spec.params, spec.v_ref)?;
        let cl = close_loop(&tf_matrix(&spec.params, &op, ft)?, &spec.gains)?;
        let report = stage_report(&spec.params, &op, &cl)?;
        println!("stage {}: {:?} (max Re = {:.6e})", k + 1, report.verdict, report.max_real_part);
        verdicts.push(report.verdict.is_stable());
        write_json(
            &out.join(format!("single_stage{}.json", k + 1)),
            &SingleReport { stage: k + 1, feedthrough: ft, report },
        )?;
    }
    Ok(Outcome::from_all(verdicts))
}

/// Writes `cascade_report.json`.
pub fn analyze_cascade(cfg: &SystemConfig, out: &Path) -> Result<Outcome, CliError> {
    let report = cascade_stability(cfg)?;
    fs::create_dir_all(out)?;
    println!(
        "cascade: {:?}; middlebrook worst ratio {:.6} at {:.3} Hz ({}); paper/physical {:?}/{:?}",
        report.exact_verdict,
        report.middlebrook.worst_ratio,
        report.middlebrook.worst_freq_hz,
        if report.middlebrook.satisfied { "satisfied" } else { "violated" },
        report.mode_comparison.map(|m| m.paper),
        report.mode_comparison.map(|m| m.physical),
    );
    write_json(&out.join("cascade_report.json"), &report)?;
    Ok(Outcome::from_all([report.exact_verdict.is_stable()]))
}

pub fn cascade_stability(cfg: &SystemConfig) -> Result<StabilityReport, CliError> {
    if cfg.stages.len() != 2 {
        return Err(CliError::Usage("analyze-cascade needs exactly 2 stages".into()));
    }
    Ok(cascade_report(&cfg.stage_spec(0)?, &cfg.stage_spec(1)?, cfg.cascade_options(), &cfg.sweep)?)
}

/// Writes `<quantity>_stage<k>.csv` per stage, and `minor_loop.csv`.
pub fn bode(cfg: &SystemConfig, quantities: &[Quantity], out: &Path) -> Result<Outcome, CliError> {
    let explicit = !quantities.is_empty();
    let quantities: Vec<Quantity> = if explicit { quantities.to_vec() } else { Quantity::ALL.to_vec() };
    fs::create_dir_all(out)?;
    let ft = cfg.modes.feedthrough;
    let sw = cfg.sweep;
    let emit = |f: &RationalFunction, name: String| -> Result<(), CliError> {
        let r = sweep(f, sw.f_min_hz, sw.f_max_hz, sw.points_per_decade)?;
        let mut w = create(&out.join(&name))?;
        r.write_csv(&mut w)?;
        w.flush()?;
        println!("wrote {name} ({} points)", r.len());
        Ok(())
    };
    for k in 0..cfg.stages.len() {
        let spec = cfg.stage_spec(k)?;
        let op = operating_point(&spec.params, spec.v_ref)?;
        let h = tf_matrix(&spec.params, &op, ft)?;
        let ol = open_loop_quantities(&h)?;
        let cl = close_loop(&h, &spec.gains)?;
        for q in &quantities {
            let f = match q {
                Quantity::GvgOl => &ol.g_vg,
                Quantity::GvgCl => &cl.g_vg,
                Quantity::ZinOl => &ol.z_in,
                Quantity::ZinCl => &cl.z_in,
                Quantity::ZoutOl => &ol.z_out,
                Quantity::ZoutCl => &cl.z_out,
                Quantity::MinorLoop => continue,
            };
            emit(f, format!("{}_stage{}.csv", q.name(), k + 1))?;
        }
    }
    if quantities.contains(&Quantity::MinorLoop) {
        let model = if cfg.stages.len() == 2 {
            build_cascade(&cfg.stage_spec(0)?, &cfg.stage_spec(1)?, cfg.cascade_options()).map_err(CliError::from)
        } else {
            Err(CliError::Usage("minor_loop needs exactly 2 stages".into()))
        };
        match model {
            Ok(m) => emit(&m.minor_loop, "minor_loop.csv".into())?,
            Err(e) if explicit => return Err(e),
            Err(e) => eprintln!("skipping minor_loop: {e}"),
        }
    }
    Ok(Outcome::Stable)
}

/// Writes `trace.csv` and `classification.json`. A single-stage config is
/// simulated standalone; two stages are simulated in cascade.
pub fn simulate(cfg: &SystemConfig, duration: Option<f64>, dt: Option<f64>, out: &Path) -> Result<Outcome, CliError> {
    let ft = cfg.modes.feedthrough;
    let (stages, poles) = if cfg.stages.len() == 1 {
        let spec = cfg.stage_spec(0)?;
        let op = operating_point(&spec.params, spec.v_ref)?;
        let cl = close_loop(&tf_matrix(&spec.params, &op, ft)?, &spec.gains)?;
        let stage = SimStage { params: spec.params, gains: spec.gains, v_ref: spec.v_ref, frozen_duty: None };
        (vec![stage], poly_roots(&cl.char_poly)?.expanded())
    } else {
        let m = build_cascade(&cfg.stage_spec(0)?, &cfg.stage_spec(1)?, cfg.cascade_options())?;
        let stage = |s: &buckstab::cascade::CascadeStage| SimStage {
            params: s.params,
            gains: s.gains,
            v_ref: s.op.v_c,
            frozen_duty: None,
        };
        (vec![stage(&m.stage1), stage(&m.stage2)], poly_roots(m.total_gain.den())?.expanded())
    };

    let f0 = f0_max_hz(&stages.iter().map(|s| s.params).collect::<Vec<_>>());
    let mut sim = SimConfig::auto(&poles, f0);
    sim.initial_state = cfg.sim.initial_state.clone().unwrap_or(InitialState::Zero);
    sim.events = cfg.sim.events.clone();
    sim.saturation = cfg.sim.saturation;
    if let Some(d) = dt.or(cfg.sim.dt) {
        sim.dt = d;
    }
    if let Some(d) = duration.or(cfg.sim.duration) {
        sim.duration = d;
    } else {
        sim.duration = sim.duration.max(1000.0 * sim.dt);
    }

    let trace = if stages.len() == 1 {
        simulate_single(&stages[0].params, &stages[0].gains, stages[0].v_ref, &sim)?
    } else {
        simulate_cascade(&stages[0], &stages[1], ft.into(), &sim)?
    };

    let targets: Vec<OperatingPoint> = stages
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let steps: f64 = sim
                .events
                .iter()
                .filter(|e| e.kind == EventKind::ReferenceStep && e.stage == k + 1)
                .map(|e| e.magnitude)
                .sum();
            OperatingPoint { duty: 0.0, v_c: s.v_ref + steps, i_l: 0.0 }
        })
        .collect();
    let classification = classify_trace(&trace, &targets)?;

    fs::create_dir_all(out)?;
    let mut w = create(&out.join("trace.csv"))?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let summary = SimulationSummary {
        classification,
        diverged_at: trace.diverged_at,
        targets_v: targets.iter().map(|t| t.v_c).collect(),
        duration: sim.duration,
        dt: sim.dt,
        samples: trace.len(),
    };
    println!(
        "simulation: {:?} over {:.6e} s ({} samples), envelope growth {:.4e} /s",
        classification.verdict,
        sim.duration,
        trace.len(),
        classification.envelope_growth_rate
    );
    write_json(&out.join("classification.json"), &summary)?;
    Ok(Outcome::from_all([classification.verdict == buckstab::timesim::TraceVerdict::Converged]))
}
