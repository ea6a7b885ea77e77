//! Power flow on a fixed radial configuration.
//!
//! [`lindistflow_solve`] is the lossless, linearized branch-flow model used
//! inside the optimizer. [`newton_ac_solve`] is a full AC Newton-Raphson
//! solver (polar coordinates, dense Jacobian rebuilt every iteration) used as
//! the accuracy reference and for evaluating schedules.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::grid::{GridSpec, RadialConfig};
use crate::network::{spanning_tree, BranchKind, Network};

type C64 = Complex<f64>;

pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 50;

/// Nodal injections in p.u., indexed by node id - 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    pub p_demand: Vec<f64>,
    pub q_demand: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    /// Net storage power, positive when the unit feeds the grid.
    pub storage: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n: usize) -> Self {
        InjectionSet {
            p_demand: vec![0.0; n],
            q_demand: vec![0.0; n],
            p_gen: vec![0.0; n],
            q_gen: vec![0.0; n],
            storage: vec![0.0; n],
        }
    }

    pub fn from_demand(p: Vec<f64>, q: Vec<f64>) -> Self {
        let n = p.len();
        InjectionSet {
            p_demand: p,
            q_demand: q,
            ..InjectionSet::zeros(n)
        }
    }

    pub fn len(&self) -> usize {
        self.p_demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_demand.is_empty()
    }

    pub fn net_p(&self, k: usize) -> f64 {
        self.p_gen[k] - self.p_demand[k] + self.storage[k]
    }

    pub fn net_q(&self, k: usize) -> f64 {
        self.q_gen[k] - self.q_demand[k]
    }

    pub fn total_demand_p(&self) -> f64 {
        self.p_demand.iter().sum()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let vectors = [&self.p_demand, &self.q_demand, &self.p_gen, &self.q_gen, &self.storage];
        for v in vectors {
            if v.len() != n {
                return Err(VvoError::DimensionMismatch { expected: n, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(VvoError::InvalidInput("non-finite injection".into()));
            }
        }
        if self.p_demand.iter().chain(&self.q_demand).any(|&x| x < 0.0) {
            return Err(VvoError::InvalidInput("negative demand".into()));
        }
        if self.p_gen.iter().any(|&x| x < 0.0) {
            return Err(VvoError::InvalidInput("negative active generation".into()));
        }
        Ok(())
    }
}

/// Sending-end powers on a layout line, `n = line.from`, `m = line.to`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    pub p_nm: f64,
    pub q_nm: f64,
    pub p_mn: f64,
    pub q_mn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// One entry per layout line; open lines carry zeros.
    pub flows: Vec<LineFlow>,
    /// Squared voltage magnitude per user node.
    pub v_sq: Vec<f64>,
    /// Voltage angle per user node, radians (Newton only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub angle: Vec<f64>,
    /// Squared voltage of the internal tap-changer node, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_v_sq: Option<f64>,
    /// Active loss in p.u.: exact for Newton, the quadratic estimate for
    /// LinDistFlow.
    pub loss: f64,
    pub substation_p: f64,
    pub substation_q: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl FlowSolution {
    pub fn voltages(&self) -> Vec<f64> {
        self.v_sq.iter().map(|v| v.sqrt()).collect()
    }
}

fn check_tap(spec: &GridSpec, tap_ratio: f64) -> Result<()> {
    if !(tap_ratio.is_finite() && tap_ratio > 0.0) {
        return Err(VvoError::InvalidInput(format!("tap ratio {tap_ratio}")));
    }
    if spec.equipment().ultc.is_none() && (tap_ratio - 1.0).abs() > 1e-12 {
        return Err(VvoError::InvalidInput("tap ratio given but the grid has no ULTC".into()));
    }
    Ok(())
}

fn check_config(spec: &GridSpec, config: &RadialConfig) -> Result<()> {
    if config.len() != spec.lines().len() {
        return Err(VvoError::DimensionMismatch {
            expected: spec.lines().len(),
            got: config.len(),
        });
    }
    Ok(())
}

/// Lossless linearized branch flow, solved by one upstream sweep (flow
/// aggregation) and one downstream sweep (squared-voltage propagation).
pub fn lindistflow_solve(
    spec: &GridSpec,
    config: &RadialConfig,
    inj: &InjectionSet,
    tap_ratio: f64,
) -> Result<FlowSolution> {
    check_config(spec, config)?;
    check_tap(spec, tap_ratio)?;
    inj.validate(spec.node_count())?;
    let net = Network::build(spec, false);
    let closed = net.branch_status(config);
    let tree = spanning_tree(&net, &closed)?;
    let n = net.n_nodes;

    // Subtree net demand flowing parent -> child.
    let mut down_p: Vec<f64> = (0..n).map(|k| -inj.net_p(k)).collect();
    let mut down_q: Vec<f64> = (0..n).map(|k| -inj.net_q(k)).collect();
    for &u in tree.order.iter().rev() {
        if let Some(parent) = tree.parent_node(&net, u) {
            down_p[parent] += down_p[u];
            down_q[parent] += down_q[u];
        }
    }

    let mut v_sq = vec![0.0; n];
    let mut aux_v_sq = None;
    v_sq[net.substation] = 1.0;
    let t2 = tap_ratio * tap_ratio;
    for &u in tree.order.iter().skip(1) {
        let (b, fwd) = tree.parent[u].expect("non-root");
        let br = &net.branches[b];
        let parent = if fwd { br.from } else { br.to };
        let drop = 2.0 * (br.r * down_p[u] + br.x * down_q[u]);
        v_sq[u] = match (br.kind, fwd) {
            (BranchKind::TappedLine, true) => {
                aux_v_sq = Some(t2 * v_sq[parent]);
                t2 * v_sq[parent] - drop
            }
            (BranchKind::TappedLine, false) => {
                let aux = v_sq[parent] - drop;
                aux_v_sq = Some(aux);
                aux / t2
            }
            _ => v_sq[parent] - drop,
        };
    }

    let mut flows = vec![LineFlow::default(); spec.lines().len()];
    for &u in tree.order.iter().skip(1) {
        let (b, fwd) = tree.parent[u].expect("non-root");
        let layout = net.branches[b].layout;
        let sign = if fwd { 1.0 } else { -1.0 };
        let (p, q) = (sign * down_p[u], sign * down_q[u]);
        flows[layout] = LineFlow { p_nm: p, q_nm: q, p_mn: -p, q_mn: -q };
    }
    let mut sol = FlowSolution {
        flows,
        v_sq,
        angle: Vec::new(),
        aux_v_sq,
        loss: 0.0,
        substation_p: down_p[net.substation],
        substation_q: down_q[net.substation],
        iterations: 1,
        residual: 0.0,
    };
    if sol.v_sq.iter().chain(sol.flows.iter().map(|f| &f.p_nm)).any(|x| !x.is_finite()) {
        return Err(VvoError::InvalidInput("overflow in LinDistFlow sweep".into()));
    }
    sol.loss = quadratic_loss(spec, config, &sol)?;
    Ok(sol)
}

/// Loss estimate `sum r (p^2 + q^2)` over closed lines with voltages taken as 1 p.u.
pub fn quadratic_loss(spec: &GridSpec, config: &RadialConfig, sol: &FlowSolution) -> Result<f64> {
    check_config(spec, config)?;
    if sol.flows.len() != spec.lines().len() {
        return Err(VvoError::DimensionMismatch {
            expected: spec.lines().len(),
            got: sol.flows.len(),
        });
    }
    Ok(spec
        .lines()
        .iter()
        .zip(&sol.flows)
        .zip(config.closed())
        .filter(|(_, c)| **c)
        .map(|((l, f), _)| l.resistance * (f.p_nm * f.p_nm + f.q_nm * f.q_nm))
        .sum())
}

/// Branch admittance blocks (yff, yft, ytf, ytt).
fn branch_admittance(kind: BranchKind, r: f64, x: f64, tap: f64) -> [C64; 4] {
    let y = C64::new(1.0, 0.0) / C64::new(r, x);
    match kind {
        BranchKind::TappedLine => [y * (tap * tap), -y * tap, -y * tap, y],
        _ => [y, -y, -y, y],
    }
}

/// Full AC power flow by Newton-Raphson from a flat start.
///
/// `iterations` counts mismatch evaluations, so a case already solved by
/// the flat start reports 1.
pub fn newton_ac_solve(
    spec: &GridSpec,
    config: &RadialConfig,
    inj: &InjectionSet,
    tap_ratio: f64,
) -> Result<FlowSolution> {
    newton_ac_solve_with(spec, config, inj, tap_ratio, NEWTON_TOLERANCE, NEWTON_MAX_ITER)
}

pub fn newton_ac_solve_with(
    spec: &GridSpec,
    config: &RadialConfig,
    inj: &InjectionSet,
    tap_ratio: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<FlowSolution> {
    check_config(spec, config)?;
    check_tap(spec, tap_ratio)?;
    inj.validate(spec.node_count())?;
    let net = Network::build(spec, false);
    let closed = net.branch_status(config);
    // Validates radiality.
    spanning_tree(&net, &closed)?;
    let n = net.n_nodes;
    let slack = net.substation;

    let mut ybus = DMatrix::<C64>::zeros(n, n);
    let mut adm = Vec::with_capacity(net.branches.len());
    for (b, on) in net.branches.iter().zip(&closed) {
        let y = branch_admittance(b.kind, b.r, b.x, tap_ratio);
        if *on {
            ybus[(b.from, b.from)] += y[0];
            ybus[(b.from, b.to)] += y[1];
            ybus[(b.to, b.from)] += y[2];
            ybus[(b.to, b.to)] += y[3];
        }
        adm.push(y);
    }
    let s_spec: Vec<C64> = (0..n).map(|k| C64::new(inj.net_p(k), inj.net_q(k))).collect();
    // Unknown ordering: angles then magnitudes of every non-slack node.
    let pq: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let m = pq.len();

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut iterations = 0;
    let mut mismatch_norm;
    loop {
        iterations += 1;
        let v = DVector::<C64>::from_iterator(n, (0..n).map(|k| C64::from_polar(vm[k], va[k])));
        let ibus = &ybus * &v;
        let mut f = DVector::<f64>::zeros(2 * m);
        for (r, &k) in pq.iter().enumerate() {
            let s = v[k] * ibus[k].conj() - s_spec[k];
            f[r] = s.re;
            f[m + r] = s.im;
        }
        mismatch_norm = f.amax();
        if mismatch_norm <= tolerance {
            break;
        }
        if iterations > max_iter || !mismatch_norm.is_finite() {
            return Err(VvoError::NotConverged { iterations: iterations - 1, mismatch: mismatch_norm });
        }
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let y = ybus[(i, k)];
                let vk_unit = v[k] / vm[k];
                let mut ds_da = -C64::i() * v[i] * (y * v[k]).conj();
                let mut ds_dm = v[i] * (y * vk_unit).conj();
                if i == k {
                    ds_da += C64::i() * v[i] * ibus[i].conj();
                    ds_dm += ibus[i].conj() * vk_unit;
                }
                jac[(r, c)] = ds_da.re;
                jac[(r, m + c)] = ds_dm.re;
                jac[(m + r, c)] = ds_da.im;
                jac[(m + r, m + c)] = ds_dm.im;
            }
        }
        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(VvoError::NotConverged { iterations, mismatch: mismatch_norm })?;
        for (r, &k) in pq.iter().enumerate() {
            va[k] += dx[r];
            vm[k] += dx[m + r];
        }
    }

    let v: Vec<C64> = (0..n).map(|k| C64::from_polar(vm[k], va[k])).collect();
    // Sending-end power at both ends of every closed branch.
    let mut ends = vec![(C64::new(0.0, 0.0), C64::new(0.0, 0.0)); net.branches.len()];
    let mut loss = 0.0;
    for (k, (b, on)) in net.branches.iter().zip(&closed).enumerate() {
        if !on {
            continue;
        }
        let y = adm[k];
        let i_from = y[0] * v[b.from] + y[1] * v[b.to];
        let i_to = y[2] * v[b.from] + y[3] * v[b.to];
        let s_from = v[b.from] * i_from.conj();
        let s_to = v[b.to] * i_to.conj();
        loss += s_from.re + s_to.re;
        ends[k] = (s_from, s_to);
    }
    let mut flows = vec![LineFlow::default(); spec.lines().len()];
    for (k, b) in net.branches.iter().enumerate() {
        if !closed[k] {
            continue;
        }
        let line = &spec.lines()[b.layout];
        let (s_from, s_to) = ends[k];
        // Branches keep the layout orientation except the tapped line,
        // which is oriented primary -> secondary.
        let (s_nm, s_mn) = if b.from == line.from - 1 { (s_from, s_to) } else { (s_to, s_from) };
        flows[b.layout] = LineFlow { p_nm: s_nm.re, q_nm: s_nm.im, p_mn: s_mn.re, q_mn: s_mn.im };
    }
    let i_slack: C64 = (0..n).map(|k| ybus[(slack, k)] * v[k]).sum();
    let s_slack = v[slack] * i_slack.conj() - s_spec[slack];
    let aux_v_sq = net.tapped.map(|b| {
        let p = net.branches[b].from;
        (tap_ratio * vm[p]).powi(2)
    });
    Ok(FlowSolution {
        flows,
        v_sq: vm.iter().map(|x| x * x).collect(),
        angle: va,
        aux_v_sq,
        loss,
        substation_p: s_slack.re,
        substation_q: s_slack.im,
        iterations,
        residual: mismatch_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowComparison {
    pub mean_abs_dv: f64,
    pub max_abs_dv: f64,
    pub loss_abs_err: f64,
    /// Relative to the loss of the reference (second) solution.
    pub loss_rel_err: f64,
}

/// Voltage-magnitude and loss differences of `a` against reference `b`.
pub fn compare_solutions(a: &FlowSolution, b: &FlowSolution) -> Result<FlowComparison> {
    if a.v_sq.len() != b.v_sq.len() {
        return Err(VvoError::DimensionMismatch { expected: b.v_sq.len(), got: a.v_sq.len() });
    }
    if a.v_sq.is_empty() {
        return Err(VvoError::InvalidInput("empty solutions".into()));
    }
    let dv: Vec<f64> = a.v_sq.iter().zip(&b.v_sq).map(|(x, y)| (x.sqrt() - y.sqrt()).abs()).collect();
    let loss_abs_err = (a.loss - b.loss).abs();
    Ok(FlowComparison {
        mean_abs_dv: dv.iter().sum::<f64>() / dv.len() as f64,
        max_abs_dv: dv.iter().cloned().fold(0.0, f64::max),
        loss_abs_err,
        loss_rel_err: if b.loss.abs() > 0.0 { loss_abs_err / b.loss.abs() } else { 0.0 },
    })
}
