#![allow(dead_code)]

use vvo_core::cases::{baran_wu_33_loads, five_node_loads, five_node_switching};
use vvo_core::formulation::{build_problem, EquipmentSet, FormulationOptions, VvoProblem};
use vvo_core::grid::GridSpec;
use vvo_core::loads::{typical_pattern, DayProfileSet, HOURS};
use vvo_core::solver::{solve_qp_relaxation, QpStatus};
use vvo_core::synthetic::{synthetic_loads, LoadParams};

/// Two-hour profile of the five-node case, zero elsewhere.
pub fn five_node_profile(spec: &GridSpec) -> DayProfileSet {
    let p = five_node_loads()
        .iter()
        .map(|row| {
            let mut day = vec![0.0; HOURS];
            day[..row.len()].copy_from_slice(row);
            day.into_iter().map(|kw| spec.kw_to_pu(kw)).collect()
        })
        .collect();
    DayProfileSet::from_active(spec, p)
}

pub fn five_node_problem() -> VvoProblem {
    let g = five_node_switching();
    let opts = FormulationOptions {
        horizon: 2,
        switching_budget: 2,
        equipment: EquipmentSet { storage: false, ultc: false, ..EquipmentSet::all() },
        ..Default::default()
    };
    build_problem(&g, &g.default_config(), &five_node_profile(&g), None, &opts).unwrap()
}

/// Typical profile of the 33-node case from seeded synthetic history.
pub fn bw33_profile(spec: &GridSpec, seed: u64) -> DayProfileSet {
    let nominal = baran_wu_33_loads().iter().map(|l| l.0).collect();
    let hist = synthetic_loads(&LoadParams::new(nominal), 7, seed).unwrap();
    typical_pattern(&hist, 7, spec).unwrap()
}

/// Every assignment of the integer columns with its fixed-integer QP value
/// (`None` when infeasible).
pub fn enumerate_leaves(problem: &VvoProblem) -> Vec<(Vec<(usize, f64)>, Option<f64>)> {
    let cols = problem.integer_columns();
    let ranges: Vec<Vec<f64>> = cols
        .iter()
        .map(|&j| (problem.lb[j].ceil() as i64..=problem.ub[j].floor() as i64).map(|v| v as f64).collect())
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; cols.len()];
    loop {
        let fix: Vec<(usize, f64)> = cols.iter().zip(&idx).zip(&ranges).map(|((&j, &i), r)| (j, r[i])).collect();
        let r = solve_qp_relaxation(problem, &fix).unwrap();
        let value = (r.status == QpStatus::Optimal).then_some(r.objective);
        out.push((fix, value));
        let mut k = 0;
        loop {
            if k == idx.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < ranges[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
