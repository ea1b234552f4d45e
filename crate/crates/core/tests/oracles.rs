use buckstab::buck_model::{operating_point, tf_matrix, ConverterParams, Feedthrough, Load};
use buckstab::closed_loop::{close_loop, margins_with, ClosedLoopSet, PiGains};
use buckstab::ratfun::{poly_roots, Stability};
use buckstab::timesim::{
    classify_trace, f0_max_hz, simulate_single, Event, EventKind, InitialState, SimConfig, TraceVerdict,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn converter(k: usize) -> (ConverterParams, PiGains, f64) {
    match k {
        1 => (
            ConverterParams::new(100.0, 1.67e-4, 3.75e-6, Load::Resistive(5.0)).unwrap(),
            PiGains::new(0.0093602, 275.3).unwrap(),
            50.0,
        ),
        _ => (
            ConverterParams::new(100.0, 3e-6, 2.344e-5, Load::Resistive(0.8)).unwrap(),
            PiGains::new(0.01956, 537.4).unwrap(),
            50.0,
        ),
    }
}

fn closed(p: &ConverterParams, g: &PiGains, v_ref: f64) -> ClosedLoopSet {
    let op = operating_point(p, v_ref).unwrap();
    close_loop(&tf_matrix(p, &op, Feedthrough::Physical).unwrap(), g).unwrap()
}

fn step(at: f64, magnitude: f64) -> Event {
    Event { time: at, kind: EventKind::ReferenceStep, magnitude, stage: 1 }
}

fn linear_config(dt: f64, duration: f64, delta: f64) -> SimConfig {
    SimConfig {
        duration,
        dt,
        events: vec![step(0.0, delta)],
        initial_state: InitialState::AtEquilibrium,
        saturation: false,
    }
}

#[test]
fn rk4_error_ratio_under_step_halving() {
    for k in [1, 2] {
        let (p, g, v_ref) = converter(k);
        let dt = 1.0 / (50.0 * f0_max_hz(&[p]));
        let t_cmp = 40.0 * dt;
        let duration = 1000.0 * dt;
        let at = |h: f64| {
            let tr = simulate_single(&p, &g, v_ref, &linear_config(h, duration, 0.01 * v_ref)).unwrap();
            let i = (t_cmp / h).round() as usize;
            assert!((tr.time[i] - t_cmp).abs() < 1e-6 * dt);
            (tr.stages[0].i_l[i], tr.stages[0].v_c[i], *tr.stages[0].v_c.last().unwrap())
        };
        let (a, b, c) = (at(dt), at(dt / 2.0), at(dt / 4.0));
        let e1 = (a.0 - b.0).abs().max((a.1 - b.1).abs());
        let e2 = (b.0 - c.0).abs().max((b.1 - c.1).abs());
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "converter {k}: ratio {ratio}");
        assert!((b.2 - c.2).abs() <= 1e-6 * c.2.abs(), "converter {k}: final values {} {}", b.2, c.2);
    }
}

#[test]
fn small_step_matches_linear_response() {
    for k in [1, 2] {
        let (p, g, v_ref) = converter(k);
        let cl = closed(&p, &g, v_ref);
        let h = &cl.reference_tracking;
        let poles = poly_roots(h.den()).unwrap().expanded();
        let dden = h.den().derivative();
        let residues: Vec<(Complex64, Complex64)> =
            poles.iter().map(|pk| (*pk, h.num().eval(*pk) / dden.eval(*pk) / pk)).collect();
        let h0 = h.dc_value().unwrap();

        let delta = 0.01 * v_ref;
        let cfg = SimConfig::auto(&poles, f0_max_hz(&[p]));
        let tr = simulate_single(&p, &g, v_ref, &linear_config(cfg.dt, cfg.duration, delta)).unwrap();
        let worst = tr
            .time
            .iter()
            .zip(&tr.stages[0].v_c)
            .map(|(t, v)| {
                let lin: Complex64 = residues.iter().map(|(pk, r)| r * (pk * t).exp()).sum();
                let y = delta * (h0 + lin.re);
                (v - v_ref - y).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 0.01 * delta, "converter {k}: deviation {worst} V");
    }
}

#[test]
fn integral_action_removes_steady_state_error() {
    for k in [1, 2] {
        let (p, g, v_ref) = converter(k);
        let cl = closed(&p, &g, v_ref);
        let mut cfg = SimConfig::auto(&poly_roots(&cl.char_poly).unwrap().expanded(), f0_max_hz(&[p]));
        let target = 1.01 * v_ref;
        cfg.events = vec![step(0.0, target - v_ref)];
        let tr = simulate_single(&p, &g, v_ref, &cfg).unwrap();
        let last = *tr.stages[0].v_c.last().unwrap();
        assert!((last - target).abs() <= 1e-3 * target, "converter {k}: {last} vs {target}");
        assert!(tr.stages[0].duty.iter().all(|d| (0.0..=1.0).contains(d)));
    }
}

/// Time-domain verdict of a 1% reference step without saturation.
fn simulated_verdict(p: &ConverterParams, g: &PiGains, v_ref: f64, poles: &[Complex64]) -> TraceVerdict {
    let mut cfg = SimConfig::auto(poles, f0_max_hz(&[*p]));
    cfg.saturation = false;
    cfg.events = vec![step(0.0, 0.01 * v_ref)];
    let tr = simulate_single(p, g, v_ref, &cfg).unwrap();
    let target = operating_point(p, 1.01 * v_ref).unwrap();
    classify_trace(&tr, &[target]).unwrap().verdict
}

#[test]
fn hurwitz_verdict_matches_simulation() {
    let mut cases: Vec<(ConverterParams, PiGains, f64)> = vec![converter(1), converter(2)];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let log = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut stable = 0;
    while cases.len() < 22 {
        let v = log(&mut rng, 10.0, 400.0);
        let p = ConverterParams::new(
            v,
            log(&mut rng, 1e-5, 1e-3),
            log(&mut rng, 1e-6, 1e-4),
            Load::Resistive(log(&mut rng, 0.5, 50.0)),
        )
        .unwrap();
        let g = PiGains::new(log(&mut rng, 1e-3, 0.5), log(&mut rng, 10.0, 1e4)).unwrap();
        let v_ref = rng.random_range(0.2..0.8) * v;
        let poles = poly_roots(&closed(&p, &g, v_ref).char_poly).unwrap().expanded();
        let scale = poles.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let max_re = poles.iter().map(|x| x.re).fold(f64::NEG_INFINITY, f64::max);
        let slowest = poles.iter().map(|x| x.norm()).fold(f64::INFINITY, f64::min);
        // keep clear of the imaginary axis and of very stiff spectra
        if max_re.abs() < 1e-2 * scale || slowest < 1e-3 * scale {
            continue;
        }
        if max_re < 0.0 {
            stable += 1;
        }
        cases.push((p, g, v_ref));
    }
    assert!((3..=19).contains(&stable), "corpus should mix verdicts, got {stable} stable of 20");

    for (i, (p, g, v_ref)) in cases.iter().enumerate() {
        let cl = closed(p, g, *v_ref);
        let poles = poly_roots(&cl.char_poly).unwrap().expanded();
        let got = simulated_verdict(p, g, *v_ref, &poles);
        let want = match cl.verdict.verdict {
            Stability::Stable => TraceVerdict::Converged,
            _ => TraceVerdict::Diverged,
        };
        assert_eq!(got, want, "case {i}: {p:?} {g:?} v_ref {v_ref}");
    }
}

#[test]
fn margins_stable_under_grid_doubling() {
    for k in [1, 2] {
        let (p, g, v_ref) = converter(k);
        let t = closed(&p, &g, v_ref).loop_gain;
        let a = margins_with(&t, 100).unwrap();
        let b = margins_with(&t, 200).unwrap();
        let close = |x: Option<f64>, y: Option<f64>, tol: f64| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < tol,
            (None, None) => true,
            _ => false,
        };
        assert!(close(a.gain_margin_db, b.gain_margin_db, 0.1), "{a:?} {b:?}");
        assert!(close(a.phase_margin_deg, b.phase_margin_deg, 0.1), "{a:?} {b:?}");
    }
}
