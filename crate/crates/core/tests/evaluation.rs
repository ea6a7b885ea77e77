mod common;

use vvo_core::cases::{baran_wu_33, baran_wu_33_bare, baran_wu_33_loads};
use vvo_core::eval::{evaluate, replay_expected_loss, DayActuals, FlowEngine};
use vvo_core::formulation::{build_problem, extract_schedule, EquipmentSet, FormulationOptions, VvoSchedule};
use vvo_core::solver::{solve_problem, BnbOptions};
use vvo_core::synthetic::{synthetic_loads, synthetic_wind, LoadParams, WindParams};

fn actual_days(spec: &vvo_core::grid::GridSpec, days: u32, wind: bool) -> Vec<DayActuals> {
    let nominal = baran_wu_33_loads().iter().map(|l| l.0).collect();
    let hist = synthetic_loads(&LoadParams::new(nominal), days, 21).unwrap();
    let w = synthetic_wind(&WindParams::new(1000.0), days as usize * 24, 22).unwrap();
    (1..=days)
        .map(|d| DayActuals {
            loads: hist.day_profile(spec, d).unwrap(),
            wind_kw: if wind { w[(d as usize - 1) * 24..d as usize * 24].to_vec() } else { vec![] },
        })
        .collect()
}

#[test]
fn idle_equipment_matches_the_bare_feeder() {
    let full = baran_wu_33();
    let mut eq = full.equipment().clone();
    eq.wind = None;
    let full = full.with_equipment(eq).unwrap();
    let bare = baran_wu_33_bare();
    let opts = FormulationOptions::default();
    let idle = VvoSchedule::no_action(&full, &full.default_config(), &opts);
    let plain = VvoSchedule::no_action(&bare, &bare.default_config(), &opts);
    let days = actual_days(&bare, 2, false);
    let a = evaluate(&full, &idle, &days, FlowEngine::Newton).unwrap();
    let b = evaluate(&bare, &plain, &days, FlowEngine::Newton).unwrap();
    assert_eq!(a.hours, b.hours);
    assert_eq!(a.mean_loss_kw, b.mean_loss_kw);
    assert!(a.failed_hours.is_empty());
    assert!(a.mean_vmin > 0.9 && a.mean_vmin < 0.99);
}

#[test]
fn metrics_ignore_day_order() {
    let g = baran_wu_33_bare();
    let s = VvoSchedule::no_action(&g, &g.default_config(), &FormulationOptions::default());
    let days = actual_days(&g, 3, false);
    let rev: Vec<DayActuals> = days.iter().rev().cloned().collect();
    let a = evaluate(&g, &s, &days, FlowEngine::Newton).unwrap();
    let b = evaluate(&g, &s, &rev, FlowEngine::Newton).unwrap();
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
    assert!(close(a.mean_loss_kw, b.mean_loss_kw));
    assert!(close(a.mean_spread, b.mean_spread));
    assert!(close(a.peak_load_mw, b.peak_load_mw));
    assert!(a.hours.iter().all(|h| h.spread >= 0.0));
}

#[test]
fn typical_profile_replay_matches_objective() {
    let g = baran_wu_33_bare();
    let prof = common::bw33_profile(&g, 4);
    let opts = FormulationOptions { horizon: 4, step_hours: 1, ..Default::default() };
    let p = build_problem(&g, &g.default_config(), &prof, None, &opts).unwrap();
    let rep = solve_problem(&p, &BnbOptions::default());
    let sched = extract_schedule(&p, rep.incumbent.as_ref().unwrap()).unwrap();
    let day = DayActuals { loads: prof.clone(), wind_kw: vec![] };
    let m = evaluate(&g, &sched, &[day], FlowEngine::LinDistFlow).unwrap();
    // Hourly steps: the per-hour LinDistFlow evaluation is the objective.
    assert!((m.mean_loss_kw - sched.expected_loss_kw).abs() <= 1e-6);
    let replay = g.pu_to_kw(replay_expected_loss(&p, &sched).unwrap());
    assert!((replay - sched.expected_loss_kw).abs() <= 1e-6);
}

#[test]
fn optimized_capacitors_lower_the_newton_loss() {
    let g = baran_wu_33();
    let mut eq = g.equipment().clone();
    eq.wind = None;
    let g = g.with_equipment(eq).unwrap();
    let days = actual_days(&g, 2, false);
    let prof = common::bw33_profile(&g, 21);
    let opts = FormulationOptions {
        horizon: 4,
        step_hours: 6,
        equipment: EquipmentSet { capacitors: true, ..EquipmentSet::none() },
        ..Default::default()
    };
    let p = build_problem(&g, &g.default_config(), &prof, None, &opts).unwrap();
    let rep = solve_problem(&p, &BnbOptions { gap_tol: 1e-2, ..Default::default() });
    let sched = extract_schedule(&p, rep.incumbent.as_ref().unwrap()).unwrap();
    let base = VvoSchedule::no_action(&g, &g.default_config(), &opts);
    let a = evaluate(&g, &sched, &days, FlowEngine::Newton).unwrap();
    let b = evaluate(&g, &base, &days, FlowEngine::Newton).unwrap();
    assert!(a.mean_loss_kw < b.mean_loss_kw);
    assert!(a.mean_vmin > b.mean_vmin);
}

#[test]
fn invalid_schedules_are_rejected() {
    let g = baran_wu_33();
    let opts = FormulationOptions::default();
    let mut s = VvoSchedule::no_action(&g, &g.default_config(), &opts);
    s.capacitor_modules[0][3] = 5;
    let days = actual_days(&g, 1, true);
    assert!(evaluate(&g, &s, &days, FlowEngine::Newton).is_err());
    let mut s = VvoSchedule::no_action(&g, &g.default_config(), &opts);
    s.switches[33] = true;
    assert!(evaluate(&g, &s, &days, FlowEngine::Newton).is_err());
}
