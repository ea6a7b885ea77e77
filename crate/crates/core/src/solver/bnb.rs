//! Branch and bound over the integer columns of a [`MiqpModel`].
//!
//! Node relaxations are solved in fixed-size batches; results are folded
//! into the incumbent in selection order, so the search is deterministic
//! regardless of the number of worker threads.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::formulation::{MiqpModel, VvoProblem, INTEGRALITY_TOL};

use super::qp::{solve_qp_relaxation, solve_with_bounds, QpResult, QpStatus};

const GAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbOptions {
    /// Relative optimality gap at which the search stops.
    pub gap_tol: f64,
    pub node_cap: usize,
    /// Wall-clock limit in seconds.
    pub time_cap: Option<f64>,
    pub threads: usize,
    /// Nodes solved per round; fixed so results do not depend on `threads`.
    pub batch: usize,
    pub trace: bool,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions { gap_tol: 1e-3, node_cap: 1_000_000, time_cap: None, threads: 1, batch: 4, trace: false }
    }
}

/// Problem structure the search exploits.
#[derive(Debug, Clone, Default)]
pub struct BranchingHints {
    /// Binaries branched before anything else (most fractional first).
    pub first: Vec<usize>,
    /// One-hot blocks, split by halving the allowed index set.
    pub one_hot: Vec<Vec<usize>>,
    /// Integer assignment evaluated before the search.
    pub warm_start: Option<Vec<(usize, f64)>>,
}

impl BranchingHints {
    pub fn for_problem(problem: &VvoProblem) -> Self {
        BranchingHints {
            first: problem.meta.decisions.switches.iter().map(|&(_, c)| c).collect(),
            one_hot: problem.one_hot_blocks(),
            warm_start: Some(problem.no_action_fixings()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Incumbent proven within the gap tolerance.
    Optimal,
    Infeasible,
    NodeCapReached,
    TimeCapReached,
}

/// Open subproblem: bounds on the integer columns, in the order of
/// [`MiqpModel::integer_columns`].
#[derive(Debug, Clone)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Lower bound inherited from the parent relaxation.
    pub bound: f64,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOutcome {
    Infeasible,
    NumericalFailure,
    /// Bound not better than the incumbent (possibly without solving).
    Pruned,
    Integral { objective: f64, improved: bool },
    Branched { decision: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub bound: f64,
    pub outcome: NodeOutcome,
    /// `(column, lb, ub)` of every integer column in the node's box.
    pub int_bounds: Vec<(usize, f64, f64)>,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let decision = match &self.outcome {
            NodeOutcome::Infeasible => "infeasible".to_string(),
            NodeOutcome::NumericalFailure => "numerical_failure".to_string(),
            NodeOutcome::Pruned => "pruned".to_string(),
            NodeOutcome::Integral { objective, improved } => {
                format!("integral {objective:.12e}{}", if *improved { " incumbent" } else { "" })
            }
            NodeOutcome::Branched { decision } => format!("branch {decision}"),
        };
        write!(f, "node={} depth={} bound={:.12e} {}", self.node, self.depth, self.bound, decision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    /// Best proven lower bound (absent when infeasible).
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub numerical_failures: usize,
    pub wall_time_s: f64,
    pub incumbent: Option<Vec<f64>>,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

impl SolveReport {
    pub fn has_incumbent(&self) -> bool {
        self.incumbent.is_some()
    }
}

fn frac(v: f64) -> f64 {
    (v - v.floor()).min(v.ceil() - v)
}

enum Split {
    Var { pos: usize, value: f64 },
    Block { left: Vec<usize>, right: Vec<usize>, prefer_left: bool },
}

struct Search<'a> {
    model: &'a MiqpModel,
    hints: &'a BranchingHints,
    int_cols: Vec<usize>,
    pos: HashMap<usize, usize>,
}

impl Search<'_> {
    fn full_bounds(&self, node: &BnbNode) -> (Vec<f64>, Vec<f64>) {
        let mut lb = self.model.lb.clone();
        let mut ub = self.model.ub.clone();
        for (k, &j) in self.int_cols.iter().enumerate() {
            lb[j] = node.lb[k];
            ub[j] = node.ub[k];
        }
        (lb, ub)
    }

    fn most_fractional(&self, cols: impl Iterator<Item = usize>, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in cols {
            let f = frac(x[j]);
            if f > INTEGRALITY_TOL && best.map_or(true, |(_, bf)| f > bf) {
                best = Some((j, f));
            }
        }
        best.map(|(j, _)| j)
    }

    fn choose(&self, node: &BnbNode, x: &[f64]) -> Option<Split> {
        let var = |j: usize| Split::Var { pos: self.pos[&j], value: x[j] };
        if let Some(j) = self.most_fractional(self.hints.first.iter().copied(), x) {
            return Some(var(j));
        }
        let in_blocks: std::collections::HashSet<usize> = self.hints.one_hot.iter().flatten().copied().collect();
        let rest = self.int_cols.iter().copied().filter(|j| !in_blocks.contains(j) && !self.hints.first.contains(j));
        if let Some(j) = self.most_fractional(rest, x) {
            return Some(var(j));
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for block in &self.hints.one_hot {
            let allowed: Vec<usize> = block.iter().copied().filter(|j| node.ub[self.pos[j]] > 0.5).collect();
            if allowed.len() < 2 || allowed.iter().all(|&j| frac(x[j]) <= INTEGRALITY_TOL) {
                continue;
            }
            let score = 1.0 - allowed.iter().map(|&j| x[j]).fold(f64::NEG_INFINITY, f64::max);
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, allowed));
            }
        }
        if let Some((_, allowed)) = best {
            let (l, r) = allowed.split_at(allowed.len() / 2);
            let mass = |s: &[usize]| s.iter().map(|&j| x[j]).sum::<f64>();
            return Some(Split::Block { prefer_left: mass(l) >= mass(r), left: l.to_vec(), right: r.to_vec() });
        }
        self.most_fractional(self.int_cols.iter().copied(), x).map(var)
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.int_cols.iter().all(|&j| frac(x[j]) <= INTEGRALITY_TOL)
    }

    fn solve_fixed(&self, x: &[f64]) -> QpResult {
        let mut lb = self.model.lb.clone();
        let mut ub = self.model.ub.clone();
        for &j in &self.int_cols {
            lb[j] = x[j].round();
            ub[j] = x[j].round();
        }
        solve_with_bounds(self.model, &lb, &ub)
    }

    /// When every fractional integer column lies in a one-hot block, the
    /// point with each block set to its largest allowed entry.
    fn one_hot_rounding(&self, node: &BnbNode, x: &[f64]) -> Option<Vec<f64>> {
        let mut in_blocks = vec![false; self.int_cols.len()];
        for &j in self.hints.one_hot.iter().flatten() {
            in_blocks[self.pos[&j]] = true;
        }
        let outside_integral = self
            .int_cols
            .iter()
            .zip(&in_blocks)
            .all(|(&j, &inb)| inb || frac(x[j]) <= INTEGRALITY_TOL);
        if !outside_integral || self.is_integral(x) {
            return None;
        }
        let mut rounded = x.to_vec();
        for block in &self.hints.one_hot {
            let allowed = block.iter().copied().filter(|j| node.ub[self.pos[j]] > 0.5);
            let pick = allowed.fold(None, |best: Option<usize>, j| match best {
                Some(b) if x[b] >= x[j] => Some(b),
                _ => Some(j),
            })?;
            for &j in block {
                rounded[j] = if j == pick { 1.0 } else { 0.0 };
            }
        }
        Some(rounded)
    }

    fn int_bounds(&self, node: &BnbNode) -> Vec<(usize, f64, f64)> {
        self.int_cols.iter().enumerate().map(|(k, &j)| (j, node.lb[k], node.ub[k])).collect()
    }
}

#[cfg(feature = "parallel")]
fn solve_batch<R: Send>(pool: Option<&rayon::ThreadPool>, f: impl Fn(&BnbNode) -> R + Sync, batch: &[BnbNode]) -> Vec<R> {
    use rayon::prelude::*;
    match pool {
        Some(p) => p.install(|| batch.par_iter().map(&f).collect()),
        None => batch.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn solve_batch<R>(_pool: Option<&()>, f: impl Fn(&BnbNode) -> R, batch: &[BnbNode]) -> Vec<R> {
    batch.iter().map(f).collect()
}

/// Solve a VVO problem with its natural branching structure.
pub fn solve_problem(problem: &VvoProblem, opts: &BnbOptions) -> SolveReport {
    branch_and_bound(problem, &BranchingHints::for_problem(problem), opts)
}

pub fn branch_and_bound(model: &MiqpModel, hints: &BranchingHints, opts: &BnbOptions) -> SolveReport {
    let start = Instant::now();
    let int_cols = model.integer_columns();
    let pos = int_cols.iter().enumerate().map(|(k, &j)| (j, k)).collect();
    let search = Search { model, hints, int_cols, pos };

    #[cfg(feature = "parallel")]
    let pool = (opts.threads > 1)
        .then(|| rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build().ok())
        .flatten();
    #[cfg(not(feature = "parallel"))]
    let pool: Option<()> = None;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if !search.int_cols.is_empty() {
        if let Some(Ok(r)) = hints.warm_start.as_ref().map(|w| solve_qp_relaxation(model, w)) {
            if r.status == QpStatus::Optimal {
                incumbent = Some((r.objective, r.x));
            }
        }
    }

    let mut open = vec![BnbNode {
        id: 0,
        parent: None,
        depth: 0,
        bound: f64::NEG_INFINITY,
        lb: search.int_cols.iter().map(|&j| model.lb[j]).collect(),
        ub: search.int_cols.iter().map(|&j| model.ub[j]).collect(),
    }];
    let mut next_id = 1;
    let mut nodes = 0;
    let mut failures = 0;
    let mut pruned_min = f64::INFINITY;
    let mut trace = Vec::new();
    let mut cap_status = None;
    let mut tree_incumbent = false;

    let cutoff = |inc: &Option<(f64, Vec<f64>)>| match inc {
        Some((v, _)) => v - opts.gap_tol * v.abs().max(GAP_EPS),
        None => f64::INFINITY,
    };

    loop {
        // Drop open nodes that can no longer improve the incumbent.
        let cut = cutoff(&incumbent);
        let inc_obj = incumbent.as_ref().map(|i| i.0);
        let mut kept = Vec::with_capacity(open.len());
        for node in open.drain(..) {
            if node.bound >= cut {
                if inc_obj.is_some_and(|v| node.bound < v) {
                    pruned_min = pruned_min.min(node.bound);
                }
                if opts.trace {
                    trace.push(TraceEntry {
                        node: node.id,
                        parent: node.parent,
                        depth: node.depth,
                        bound: node.bound,
                        outcome: NodeOutcome::Pruned,
                        int_bounds: search.int_bounds(&node),
                    });
                }
            } else {
                kept.push(node);
            }
        }
        open = kept;
        if open.is_empty() {
            break;
        }
        if let Some(v) = inc_obj {
            let lower = open.iter().map(|n| n.bound).fold(pruned_min.min(v), f64::min);
            if (v - lower) / v.abs().max(GAP_EPS) <= opts.gap_tol {
                break;
            }
        }
        if nodes >= opts.node_cap {
            cap_status = Some(SolveStatus::NodeCapReached);
            break;
        }
        if opts.time_cap.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            cap_status = Some(SolveStatus::TimeCapReached);
            break;
        }

        // Depth-first plunge until the tree itself has produced an integral
        // leaf (the warm start does not count), then best bound.
        if !tree_incumbent {
            open.sort_by(|a, b| b.depth.cmp(&a.depth).then(b.id.cmp(&a.id)));
        } else {
            open.sort_by(|a, b| a.bound.total_cmp(&b.bound).then(a.id.cmp(&b.id)));
        }
        let take = opts.batch.max(1).min(open.len()).min(opts.node_cap - nodes);
        let batch: Vec<BnbNode> = open.drain(..take).collect();
        let results = solve_batch(
            pool.as_ref(),
            |node: &BnbNode| {
                let (lb, ub) = search.full_bounds(node);
                let relaxed = solve_with_bounds(model, &lb, &ub);
                let rounded = (relaxed.status == QpStatus::Optimal)
                    .then(|| search.one_hot_rounding(node, &relaxed.x))
                    .flatten()
                    .map(|x| search.solve_fixed(&x));
                (relaxed, rounded)
            },
            &batch,
        );
        nodes += batch.len();

        for (node, (res, rounded)) in batch.into_iter().zip(results) {
            let mut entry = |bound: f64, outcome: NodeOutcome| {
                if opts.trace {
                    trace.push(TraceEntry {
                        node: node.id,
                        parent: node.parent,
                        depth: node.depth,
                        bound,
                        outcome,
                        int_bounds: search.int_bounds(&node),
                    });
                }
            };
            match res.status {
                QpStatus::Infeasible => {
                    entry(f64::INFINITY, NodeOutcome::Infeasible);
                    continue;
                }
                QpStatus::NumericalFailure => {
                    failures += 1;
                    log::warn!("relaxation of node {} failed numerically; node dropped", node.id);
                    entry(node.bound, NodeOutcome::NumericalFailure);
                    continue;
                }
                QpStatus::Optimal => {}
            }
            let bound = res.objective.max(node.bound);
            let cut = cutoff(&incumbent);
            if bound >= cut {
                if incumbent.as_ref().is_some_and(|i| bound < i.0) {
                    pruned_min = pruned_min.min(bound);
                }
                entry(bound, NodeOutcome::Pruned);
                continue;
            }
            if search.is_integral(&res.x) {
                let fixed = search.solve_fixed(&res.x);
                if fixed.status != QpStatus::Optimal {
                    failures += 1;
                    entry(bound, NodeOutcome::NumericalFailure);
                    continue;
                }
                tree_incumbent = true;
                pruned_min = pruned_min.min(bound);
                let improved = incumbent.as_ref().map_or(true, |i| fixed.objective < i.0);
                entry(bound, NodeOutcome::Integral { objective: fixed.objective, improved });
                if improved {
                    incumbent = Some((fixed.objective, fixed.x));
                }
                continue;
            }
            // One-hot rounding: fathoms the node when the rounded point
            // attains the node bound within the gap tolerance.
            if let Some(fixed) = rounded.filter(|r| r.status == QpStatus::Optimal) {
                tree_incumbent = true;
                let improved = incumbent.as_ref().map_or(true, |i| fixed.objective < i.0);
                let attains = fixed.objective - bound <= opts.gap_tol * bound.abs().max(GAP_EPS);
                if improved {
                    incumbent = Some((fixed.objective, fixed.x));
                }
                if attains {
                    pruned_min = pruned_min.min(bound);
                    let objective = incumbent.as_ref().map_or(f64::NAN, |i| i.0);
                    entry(bound, NodeOutcome::Integral { objective, improved });
                    continue;
                }
            }
            let Some(split) = search.choose(&node, &res.x) else {
                entry(bound, NodeOutcome::NumericalFailure);
                continue;
            };
            let child = |id: usize, lb: Vec<f64>, ub: Vec<f64>| BnbNode {
                id,
                parent: Some(node.id),
                depth: node.depth + 1,
                bound,
                lb,
                ub,
            };
            // The preferred child is created last so the plunge visits it first.
            let (first, second, decision) = match split {
                Split::Var { pos, value } => {
                    let (mut down_ub, mut up_lb) = (node.ub.clone(), node.lb.clone());
                    down_ub[pos] = value.floor();
                    up_lb[pos] = value.ceil();
                    let down = (node.lb.clone(), down_ub);
                    let up = (up_lb, node.ub.clone());
                    let col = search.int_cols[pos];
                    let d = format!("x{col}={value:.6} floor/ceil");
                    if value - value.floor() >= 0.5 {
                        (down, up, d)
                    } else {
                        (up, down, d)
                    }
                }
                Split::Block { left, right, prefer_left } => {
                    let mut keep_left = node.ub.clone();
                    for j in &right {
                        keep_left[search.pos[j]] = 0.0;
                    }
                    let mut keep_right = node.ub.clone();
                    for j in &left {
                        keep_right[search.pos[j]] = 0.0;
                    }
                    let l = (node.lb.clone(), keep_left);
                    let r = (node.lb.clone(), keep_right);
                    let d = format!("one-hot x{}..x{} | x{}..", left[0], left[left.len() - 1], right[0]);
                    if prefer_left {
                        (r, l, d)
                    } else {
                        (l, r, d)
                    }
                }
            };
            open.push(child(next_id, first.0, first.1));
            open.push(child(next_id + 1, second.0, second.1));
            next_id += 2;
            entry(bound, NodeOutcome::Branched { decision });
        }
    }

    let (objective, x) = match incumbent {
        Some((v, x)) => (Some(v), Some(x)),
        None => (None, None),
    };
    let lower = open.iter().map(|n| n.bound).fold(pruned_min, f64::min);
    let bound = match objective {
        Some(v) => Some(lower.min(v)),
        None if lower.is_finite() => Some(lower),
        None => None,
    };
    let gap = objective.zip(bound).map(|(v, b)| ((v - b) / v.abs().max(GAP_EPS)).max(0.0));
    let status = match (cap_status, objective) {
        (Some(s), _) => s,
        (None, Some(_)) => SolveStatus::Optimal,
        (None, None) => SolveStatus::Infeasible,
    };
    SolveReport {
        status,
        objective,
        bound,
        gap,
        nodes,
        numerical_failures: failures,
        wall_time_s: start.elapsed().as_secs_f64(),
        incumbent: x,
        trace,
    }
}
