mod common;

use common::{enumerate_leaves, five_node_problem};
use vvo_core::cases::baran_wu_33_bare;
use vvo_core::eval::replay_expected_loss;
use vvo_core::formulation::{
    build_problem, extract_schedule, EquipmentSet, FormulationOptions, MiqpModel, Row, RowFamily, VarKind,
};
use vvo_core::loads::DayProfileSet;
use vvo_core::solver::{
    branch_and_bound, solve_problem, BnbOptions, BranchingHints, NodeOutcome, SolveStatus,
};

fn exact() -> BnbOptions {
    BnbOptions { gap_tol: 0.0, trace: true, ..Default::default() }
}

#[test]
fn branch_and_bound_matches_enumeration() {
    let problem = five_node_problem();
    let leaves = enumerate_leaves(&problem);
    // 2 switches x 3^2 capacitor settings
    assert_eq!(leaves.len(), 36);
    let best = leaves.iter().filter_map(|l| l.1).fold(f64::INFINITY, f64::min);
    assert!(best.is_finite());

    let rep = solve_problem(&problem, &exact());
    assert_eq!(rep.status, SolveStatus::Optimal);
    let obj = rep.objective.unwrap();
    assert!((obj - best).abs() <= 1e-6 * best.abs(), "bnb {obj} vs enumeration {best}");

    // No leaf inside a pruned box beats the incumbent.
    for e in rep.trace.iter().filter(|e| e.outcome == NodeOutcome::Pruned) {
        for (fix, value) in &leaves {
            let inside = e
                .int_bounds
                .iter()
                .all(|&(col, lo, hi)| fix.iter().any(|&(c, v)| c == col && v >= lo - 1e-9 && v <= hi + 1e-9));
            if let (true, Some(v)) = (inside, value) {
                assert!(*v >= obj - 1e-6 * obj.abs(), "pruned node {} hides {v} < {obj}", e.node);
            }
        }
    }
}

#[test]
fn child_bounds_never_decrease() {
    let problem = five_node_problem();
    let rep = solve_problem(&problem, &exact());
    let bound_of: std::collections::HashMap<usize, f64> = rep.trace.iter().map(|e| (e.node, e.bound)).collect();
    for e in &rep.trace {
        if let (Some(p), true) = (e.parent, e.bound.is_finite()) {
            assert!(e.bound >= bound_of[&p] - 1e-12);
        }
    }
}

#[test]
fn solve_is_deterministic_across_threads() {
    let problem = five_node_problem();
    let a = solve_problem(&problem, &exact());
    let b = solve_problem(&problem, &exact());
    let c = solve_problem(&problem, &BnbOptions { threads: 3, ..exact() });
    assert_eq!(a.incumbent, b.incumbent);
    assert_eq!(a.incumbent, c.incumbent);
    assert_eq!(a.nodes, c.nodes);
    let trace = |r: &vvo_core::solver::SolveReport| r.trace.iter().map(|e| e.to_string()).collect::<Vec<_>>();
    assert_eq!(trace(&a), trace(&c));
}

#[test]
fn no_integers_means_single_node() {
    let g = baran_wu_33_bare();
    let opts = FormulationOptions { horizon: 2, ..Default::default() };
    let prof = common::bw33_profile(&g, 5);
    let p = build_problem(&g, &g.default_config(), &prof, None, &opts).unwrap();
    assert!(p.integer_columns().is_empty());
    let rep = solve_problem(&p, &BnbOptions::default());
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert_eq!(rep.nodes, 1);
    assert_eq!(rep.gap, Some(0.0));
}

#[test]
fn tight_voltage_band_is_infeasible_at_root() {
    let bare = baran_wu_33_bare();
    let mut nodes = bare.nodes().to_vec();
    for n in &mut nodes {
        n.vmin = 0.999;
        n.vmax = 1.001;
    }
    let g = vvo_core::grid::GridSpec::new(1.0, 12.66, nodes, bare.lines().to_vec(), Default::default()).unwrap();
    let opts = FormulationOptions { horizon: 2, ..Default::default() };
    let p = build_problem(&g, &g.default_config(), &common::bw33_profile(&g, 5), None, &opts).unwrap();
    let rep = solve_problem(&p, &BnbOptions::default());
    assert_eq!(rep.status, SolveStatus::Infeasible);
    assert!(rep.objective.is_none() && rep.incumbent.is_none());
}

#[test]
fn node_cap_stops_the_search() {
    let problem = five_node_problem();
    let rep = solve_problem(&problem, &BnbOptions { gap_tol: 0.0, node_cap: 1, batch: 1, ..Default::default() });
    assert_eq!(rep.nodes, 1);
    assert!(matches!(rep.status, SolveStatus::NodeCapReached | SolveStatus::Optimal));
    // The warm no-action start is always available here.
    assert!(rep.has_incumbent());
}

#[test]
fn integer_knapsack_toy() {
    // min (x0 - 1.6)^2-like objective through a shifted variable:
    // z = x0 - 1.6 (row), minimize z^2 with x0 integer in [0, 3].
    let model = MiqpModel {
        kinds: vec![VarKind::Integer, VarKind::Continuous],
        lb: vec![0.0, -10.0],
        ub: vec![3.0, 10.0],
        obj_diag: vec![0.0, 1.0],
        rows: vec![Row { coeffs: vec![(0, 1.0), (1, -1.0)], lo: 1.6, hi: 1.6, family: RowFamily::Generic }],
    };
    let rep = branch_and_bound(&model, &BranchingHints::default(), &exact());
    assert_eq!(rep.status, SolveStatus::Optimal);
    let x = rep.incumbent.unwrap();
    assert!((x[0] - 2.0).abs() < 1e-6);
    assert!((rep.objective.unwrap() - 0.16).abs() < 1e-7);
}

#[test]
fn replay_reproduces_the_objective() {
    let problem = five_node_problem();
    let rep = solve_problem(&problem, &exact());
    let sched = extract_schedule(&problem, rep.incumbent.as_ref().unwrap()).unwrap();
    let replay = replay_expected_loss(&problem, &sched).unwrap();
    assert!((replay - rep.objective.unwrap()).abs() <= 1e-6 * replay.abs().max(1e-12) + 1e-12);
}

#[test]
fn zero_load_optimum_is_zero() {
    let g = vvo_core::cases::five_node_switching();
    let opts = FormulationOptions {
        horizon: 2,
        switching_budget: 2,
        equipment: EquipmentSet { storage: false, ultc: false, ..EquipmentSet::all() },
        ..Default::default()
    };
    let p = build_problem(&g, &g.default_config(), &DayProfileSet::zeros(5), None, &opts).unwrap();
    let rep = solve_problem(&p, &BnbOptions::default());
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.objective.unwrap().abs() < 1e-9);
}

#[test]
fn enumeration_instance_is_not_trivial() {
    let problem = five_node_problem();
    let leaves = enumerate_leaves(&problem);
    let feasible: Vec<f64> = leaves.iter().filter_map(|l| l.1).collect();
    // Only the two radial switch states are feasible.
    assert_eq!(feasible.len(), 18);
    let best = feasible.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = feasible.iter().cloned().fold(0.0, f64::max);
    assert!(worst > 1.2 * best, "{best} {worst}");
    let rep = solve_problem(&problem, &exact());
    assert!(rep.nodes > 1);
}
