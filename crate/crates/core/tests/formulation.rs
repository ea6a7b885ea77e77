mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vvo_core::cases::{baran_wu_33, baran_wu_33_bare, five_node_switching, six_node_mesh};
use vvo_core::formulation::{
    build_problem, extract_schedule, storage_energy_residual, EquipmentSet, FormulationOptions, VarKey, VvoProblem,
    WindInput,
};
use vvo_core::grid::{check_radiality, GridSpec, Radiality, RadialConfig};
use vvo_core::loads::DayProfileSet;
use vvo_core::powerflow::{lindistflow_solve, InjectionSet};
use vvo_core::solver::{solve_problem, solve_qp_relaxation, BnbOptions, QpStatus, SolveStatus};
use vvo_core::wind::WindMarkovModel;

#[test]
fn relaxation_without_integers_reproduces_lindistflow() {
    let g = baran_wu_33_bare();
    let prof = common::bw33_profile(&g, 11);
    let opts = FormulationOptions { horizon: 3, step_hours: 1, ..Default::default() };
    let cfg = g.default_config();
    let p = build_problem(&g, &cfg, &prof, None, &opts).unwrap();
    let r = solve_qp_relaxation(&p, &[]).unwrap();
    assert_eq!(r.status, QpStatus::Optimal);
    let mut expected_obj = 0.0;
    for k in 0..3 {
        let col = |m: &Vec<Vec<f64>>| m.iter().map(|row| row[k]).collect::<Vec<_>>();
        let sol = lindistflow_solve(&g, &cfg, &InjectionSet::from_demand(col(&prof.p), col(&prof.q)), 1.0).unwrap();
        expected_obj += sol.loss / 3.0;
        for (b, f) in sol.flows.iter().enumerate().filter(|(b, _)| cfg.is_closed(*b)) {
            let pf = r.x[p.vars.col(VarKey::FlowP { branch: b, reverse: false, scen: k })];
            let qf = r.x[p.vars.col(VarKey::FlowQ { branch: b, reverse: false, scen: k })];
            assert!((pf - f.p_nm).abs() < 1e-8, "p on line {b} step {k}: {pf} vs {}", f.p_nm);
            assert!((qf - f.q_nm).abs() < 1e-8);
        }
        for (n, v) in sol.v_sq.iter().enumerate() {
            assert!((r.x[p.vars.col(VarKey::VoltSq { node: n, scen: k })] - v).abs() < 1e-8);
        }
    }
    assert!((r.objective - expected_obj).abs() < 1e-8 * expected_obj);
}

/// Spanning trees of the layout by brute force with union-find.
fn spanning_trees(spec: &GridSpec) -> Vec<Vec<bool>> {
    let n = spec.node_count();
    let m = spec.lines().len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let mut acyclic = true;
        for (k, l) in spec.lines().iter().enumerate() {
            if mask >> k & 1 == 1 {
                let (a, b) = (find(&mut parent, l.from - 1), find(&mut parent, l.to - 1));
                if a == b {
                    acyclic = false;
                }
                parent[a] = b;
            }
        }
        if acyclic {
            out.push((0..m).map(|k| mask >> k & 1 == 1).collect());
        }
    }
    out
}

fn feasible_switch_vectors(problem: &VvoProblem) -> Vec<Vec<bool>> {
    let switches = &problem.meta.decisions.switches;
    let mut out = Vec::new();
    for mask in 0u32..(1 << switches.len()) {
        let fix: Vec<(usize, f64)> = switches.iter().enumerate().map(|(k, &(_, c))| (c, (mask >> k & 1) as f64)).collect();
        if solve_qp_relaxation(problem, &fix).unwrap().status == QpStatus::Optimal {
            let mut y = vec![false; problem.meta.grid.lines().len()];
            for (k, &(layout, _)) in switches.iter().enumerate() {
                y[layout] = mask >> k & 1 == 1;
            }
            out.push(y);
        }
    }
    out
}

fn reconfiguration_only(budget: usize) -> FormulationOptions {
    FormulationOptions {
        horizon: 1,
        switching_budget: budget,
        equipment: EquipmentSet { reconfiguration: true, ..EquipmentSet::none() },
        ..Default::default()
    }
}

#[test]
fn radiality_rows_admit_exactly_the_spanning_trees() {
    let g = six_node_mesh();
    let p = build_problem(&g, &g.default_config(), &DayProfileSet::zeros(6), None, &reconfiguration_only(8)).unwrap();
    let mut feasible = feasible_switch_vectors(&p);
    let mut trees = spanning_trees(&g);
    feasible.sort();
    trees.sort();
    assert!(trees.len() > 10);
    assert_eq!(feasible, trees);
    for y in &trees {
        assert_eq!(check_radiality(&g, &RadialConfig::new(y.clone())).unwrap(), Radiality::Radial);
    }
}

#[test]
fn switching_budget_limits_distance() {
    let g = six_node_mesh();
    let base = g.default_config();
    let p = build_problem(&g, &base, &DayProfileSet::zeros(6), None, &reconfiguration_only(2)).unwrap();
    let mut feasible = feasible_switch_vectors(&p);
    let mut expected: Vec<Vec<bool>> = spanning_trees(&g)
        .into_iter()
        .filter(|y| RadialConfig::new(y.clone()).switching_distance(&base) <= 2)
        .collect();
    feasible.sort();
    expected.sort();
    assert_eq!(feasible, expected);
    assert!(expected.len() > 1);
}

#[test]
fn open_switch_carries_no_flow() {
    let p = common::five_node_problem();
    let rep = solve_problem(&p, &BnbOptions { gap_tol: 0.0, ..Default::default() });
    let x = rep.incumbent.unwrap();
    let sched = extract_schedule(&p, &x).unwrap();
    for (b, closed) in sched.switches.iter().enumerate() {
        if !closed {
            for scen in 0..2 {
                for reverse in [false, true] {
                    assert!(x[p.vars.col(VarKey::FlowP { branch: b, reverse, scen })].abs() < 1e-7);
                    assert!(x[p.vars.col(VarKey::FlowQ { branch: b, reverse, scen })].abs() < 1e-7);
                }
            }
        }
    }
}

fn full_33(tap_step: f64) -> GridSpec {
    let g = baran_wu_33();
    let mut eq = g.equipment().clone();
    eq.ultc.as_mut().unwrap().tap_step = tap_step;
    g.with_equipment(eq).unwrap()
}

fn quarter_day() -> FormulationOptions {
    FormulationOptions { horizon: 4, step_hours: 6, wind_states: Some(2), ..Default::default() }
}

/// Wide voltage limits so that every tap position is feasible.
fn wide_band(g: &GridSpec) -> GridSpec {
    let mut nodes = g.nodes().to_vec();
    for n in &mut nodes {
        n.vmin = 0.8;
        n.vmax = 1.25;
    }
    GridSpec::new(g.base_mva(), g.base_kv(), nodes, g.lines().to_vec(), g.equipment().clone()).unwrap()
}

#[test]
fn mccormick_products_are_exact_for_fixed_taps() {
    let g = wide_band(&full_33(0.02));
    let prof = common::bw33_profile(&g, 3);
    let model = WindMarkovModel::constant(300.0, 1000.0).unwrap();
    let opts = quarter_day();
    let p = build_problem(&g, &g.default_config(), &prof, Some(WindInput { model: &model, observed_state: 0 }), &opts)
        .unwrap();
    let ultc = g.equipment().ultc.clone().unwrap();
    let primary = ultc.from - 1;
    let aux = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut fix = p.no_action_fixings();
        let mut chosen = Vec::new();
        for blk in &p.meta.decisions.tap_blocks {
            let pick = rng.gen_range(0..blk.len());
            chosen.push(blk[pick].0);
            for (k, &(_, col)) in blk.iter().enumerate() {
                fix.retain(|f| f.0 != col);
                fix.push((col, if k == pick { 1.0 } else { 0.0 }));
            }
        }
        let r = solve_qp_relaxation(&p, &fix).unwrap();
        assert_eq!(r.status, QpStatus::Optimal, "taps {chosen:?}");
        for (s, sc) in p.meta.scenarios.iter().enumerate() {
            let tap = chosen[p.meta.decisions.tap_block_of_step[sc.step]];
            let vp = r.x[p.vars.col(VarKey::VoltSq { node: primary, scen: s })];
            for t in ultc.taps() {
                let prod = r.x[p.vars.col(VarKey::TapProduct { tap: t, scen: s })];
                let kappa = if t == tap { 1.0 } else { 0.0 };
                assert!((prod - kappa * vp).abs() <= 1e-7);
            }
            let va = r.x[p.vars.col(VarKey::VoltSq { node: aux, scen: s })];
            assert!((va - ultc.ratio(tap).powi(2) * vp).abs() <= 1e-6);
        }
    }
}

#[test]
fn storage_energy_equalities_hold_in_schedules() {
    let g = full_33(0.02);
    let prof = common::bw33_profile(&g, 3);
    let model = WindMarkovModel::constant(300.0, 1000.0).unwrap();
    let opts = FormulationOptions { equipment: EquipmentSet { storage: true, ..EquipmentSet::none() }, ..quarter_day() };
    let p = build_problem(&g, &g.default_config(), &prof, Some(WindInput { model: &model, observed_state: 0 }), &opts)
        .unwrap();
    let rep = solve_problem(&p, &BnbOptions::default());
    assert_eq!(rep.status, SolveStatus::Optimal);
    let sched = extract_schedule(&p, rep.incumbent.as_ref().unwrap()).unwrap();
    for u in 0..2 {
        let (ch, dis) = storage_energy_residual(&g, &sched, u);
        assert!(ch.abs() <= 1e-8 && dis.abs() <= 1e-8, "unit {u}: {ch} {dis}");
        assert!(sched.storage_kw[u].iter().any(|&kw| kw > 1.0));
    }
    sched.validate(&g, Some(1e-8)).unwrap();
}

#[test]
fn empty_storage_never_moves_power() {
    let g = full_33(0.02);
    let mut eq = g.equipment().clone();
    eq.storage[0].capacity_kwh = 0.0;
    let g = g.with_equipment(eq).unwrap();
    let prof = common::bw33_profile(&g, 3);
    let model = WindMarkovModel::constant(300.0, 1000.0).unwrap();
    let opts = FormulationOptions { equipment: EquipmentSet { storage: true, ..EquipmentSet::none() }, ..quarter_day() };
    let p = build_problem(&g, &g.default_config(), &prof, Some(WindInput { model: &model, observed_state: 0 }), &opts)
        .unwrap();
    let rep = solve_problem(&p, &BnbOptions::default());
    let sched = extract_schedule(&p, rep.incumbent.as_ref().unwrap()).unwrap();
    assert!(sched.storage_kw[0].iter().all(|&kw| kw.abs() < 1e-6), "{:?}", sched.storage_kw[0]);
    assert!(sched.storage_kw[1].iter().any(|&kw| kw > 1.0));
}

#[test]
fn extracted_schedule_decodes_devices() {
    let g = five_node_switching();
    let p = common::five_node_problem();
    let mut fix = Vec::new();
    for &(layout, col) in &p.meta.decisions.switches {
        // Close the tie, open 3-4.
        fix.push((col, if g.lines()[layout].normally_closed { 0.0 } else { 1.0 }));
    }
    fix.push((p.meta.decisions.capacitors[0][0], 2.0));
    fix.push((p.meta.decisions.capacitors[0][1], 1.0));
    let r = solve_qp_relaxation(&p, &fix).unwrap();
    assert_eq!(r.status, QpStatus::Optimal);
    let s = extract_schedule(&p, &r.x).unwrap();
    assert_eq!(s.switches, vec![true, true, false, true, true]);
    assert_eq!(s.capacitor_modules, vec![vec![2, 1]]);
    assert_eq!(s.taps, vec![0, 0]);
    assert!((s.expected_loss_kw - g.pu_to_kw(r.objective)).abs() < 1e-9);
    s.validate(&g, None).unwrap();

    let mut frac = r.x.clone();
    frac[p.meta.decisions.capacitors[0][0]] = 1.5;
    assert!(extract_schedule(&p, &frac).is_err());
}
