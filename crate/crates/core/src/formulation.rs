//! Mixed-integer quadratic program for day-ahead expected-loss VVO.
//!
//! Continuous flow and voltage variables are replicated per (step, wind
//! state) scenario; switch statuses, tap positions, capacitor module counts
//! and storage powers are shared by all scenarios of a step, so the
//! resulting schedule is non-anticipative.
//!
//! Every constraint is a row `lo <= a x <= hi` tagged with the
//! [`RowFamily`] it implements, and the objective is `sum_j d_j x_j^2`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::grid::{check_radiality, GridSpec, Radiality, RadialConfig};
use crate::loads::{default_peak_hours, DayProfileSet, HOURS};
use crate::network::{BranchKind, Network};
use crate::wind::{propagate, WindMarkovModel};

/// Rounding tolerance for integer variables.
pub const INTEGRALITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquipmentSet {
    pub capacitors: bool,
    pub ultc: bool,
    pub storage: bool,
    pub reconfiguration: bool,
}

impl EquipmentSet {
    pub fn all() -> Self {
        EquipmentSet { capacitors: true, ultc: true, storage: true, reconfiguration: true }
    }
    pub fn none() -> Self {
        EquipmentSet { capacitors: false, ultc: false, storage: false, reconfiguration: false }
    }
}

impl Default for EquipmentSet {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationOptions {
    /// Number of scheduling steps H.
    pub horizon: usize,
    /// Clock hours covered by one step; `horizon * step_hours <= 24`.
    pub step_hours: usize,
    /// Keep only the most probable wind states per step (renormalized).
    pub wind_states: Option<usize>,
    /// Maximum number of switching actions; must be even.
    pub switching_budget: usize,
    pub ampacity_segments: usize,
    /// Disjunctive (big-M) constant.
    pub disjunctive: f64,
    /// Peak clock hours (1..=24).
    pub peak_hours: Vec<usize>,
    pub equipment: EquipmentSet,
    /// One tap position for the whole day instead of one per step.
    pub daily_tap: bool,
}

impl Default for FormulationOptions {
    fn default() -> Self {
        FormulationOptions {
            horizon: HOURS,
            step_hours: 1,
            wind_states: None,
            switching_budget: 6,
            ampacity_segments: 8,
            disjunctive: 100.0,
            peak_hours: default_peak_hours(),
            equipment: EquipmentSet::all(),
            daily_tap: false,
        }
    }
}

impl FormulationOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VvoError::InvalidInput(m.to_string()));
        if self.horizon == 0 || self.step_hours == 0 || self.horizon * self.step_hours > HOURS {
            return bad("horizon * step_hours must lie in 1..=24");
        }
        if self.switching_budget % 2 != 0 {
            return bad("switching budget must be an even number");
        }
        if self.ampacity_segments < 4 || self.ampacity_segments % 2 != 0 {
            return bad("ampacity polygon needs an even number (>= 4) of segments");
        }
        if !(self.disjunctive > 0.0 && self.disjunctive.is_finite()) {
            return bad("disjunctive constant must be positive");
        }
        if self.wind_states == Some(0) {
            return bad("at least one wind state must be kept");
        }
        if self.peak_hours.iter().any(|h| !(1..=HOURS).contains(h)) {
            return bad("peak hours must lie in 1..=24");
        }
        Ok(())
    }

    /// Clock hours (1-based) covered by step `k` (0-based).
    pub fn step_clock_hours(&self, k: usize) -> std::ops::RangeInclusive<usize> {
        k * self.step_hours + 1..=(k + 1) * self.step_hours
    }

    /// A step is peak when most of its hours are peak hours.
    pub fn is_peak_step(&self, k: usize) -> bool {
        let peak = self.step_clock_hours(k).filter(|h| self.peak_hours.contains(h)).count();
        2 * peak > self.step_hours
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

/// Logical identity of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKey {
    /// Active flow on internal branch, `reverse` = measured from the `to` end.
    FlowP { branch: usize, reverse: bool, scen: usize },
    FlowQ { branch: usize, reverse: bool, scen: usize },
    VoltSq { node: usize, scen: usize },
    /// `kappa_tap * |v_primary|^2`.
    TapProduct { tap: i32, scen: usize },
    SubstationP { scen: usize },
    SubstationQ { scen: usize },
    Storage { unit: usize, step: usize },
    Capacitor { bank: usize, step: usize },
    Tap { tap: i32, block: usize },
    Switch { branch: usize },
    SwitchChange { branch: usize },
    FictitiousFlow { branch: usize },
    FictitiousLoad { node: usize },
}

impl VarKey {
    pub fn name(&self) -> String {
        match *self {
            VarKey::FlowP { branch, reverse, scen } => format!("p[{branch},{},{scen}]", if reverse { "rev" } else { "fwd" }),
            VarKey::FlowQ { branch, reverse, scen } => format!("q[{branch},{},{scen}]", if reverse { "rev" } else { "fwd" }),
            VarKey::VoltSq { node, scen } => format!("vsq[{node},{scen}]"),
            VarKey::TapProduct { tap, scen } => format!("vtap[{tap},{scen}]"),
            VarKey::SubstationP { scen } => format!("psub[{scen}]"),
            VarKey::SubstationQ { scen } => format!("qsub[{scen}]"),
            VarKey::Storage { unit, step } => format!("pdss[{unit},{step}]"),
            VarKey::Capacitor { bank, step } => format!("cap[{bank},{step}]"),
            VarKey::Tap { tap, block } => format!("kappa[{tap},{block}]"),
            VarKey::Switch { branch } => format!("y[{branch}]"),
            VarKey::SwitchChange { branch } => format!("alpha[{branch}]"),
            VarKey::FictitiousFlow { branch } => format!("kflow[{branch}]"),
            VarKey::FictitiousLoad { node } => format!("kload[{node}]"),
        }
    }
}

/// Bijective map between logical variables and columns.
#[derive(Debug, Clone, Default)]
pub struct VariableIndex {
    keys: Vec<VarKey>,
    map: HashMap<VarKey, usize>,
}

impl VariableIndex {
    fn add(&mut self, key: VarKey) -> usize {
        let col = self.keys.len();
        let prev = self.map.insert(key, col);
        assert!(prev.is_none(), "variable {key:?} registered twice");
        self.keys.push(key);
        col
    }
    pub fn get(&self, key: &VarKey) -> Option<usize> {
        self.map.get(key).copied()
    }
    pub fn col(&self, key: VarKey) -> usize {
        self.map[&key]
    }
    pub fn key(&self, col: usize) -> &VarKey {
        &self.keys[col]
    }
    pub fn len(&self) -> usize {
        self.keys.len()
    }
    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
    pub fn keys(&self) -> &[VarKey] {
        &self.keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowFamily {
    LosslessP,
    LosslessQ,
    VoltageDrop,
    VoltageDropBand,
    BalanceP,
    BalanceQ,
    StorageCharge,
    StorageDischarge,
    UltcVoltage,
    TapOneHot,
    McCormick,
    Ampacity,
    Disjunctive,
    RadialityCount,
    FictitiousBalance,
    FictitiousBound,
    SwitchChange,
    SwitchBudget,
    /// Rows of hand-built models.
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
    pub family: RowFamily,
}

impl Row {
    pub fn is_equality(&self) -> bool {
        self.lo == self.hi
    }
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub step: usize,
    pub state: usize,
    pub prob: f64,
    pub wind_pu: f64,
}

/// Where each kind of decision lives, for schedule extraction.
#[derive(Debug, Clone, Default)]
pub struct DecisionColumns {
    /// `(layout line, y column)` for every switch variable.
    pub switches: Vec<(usize, usize)>,
    /// Per tap block: `(tap, kappa column)`.
    pub tap_blocks: Vec<Vec<(i32, usize)>>,
    pub tap_block_of_step: Vec<usize>,
    /// `[bank][step]`
    pub capacitors: Vec<Vec<usize>>,
    /// `[unit][step]`
    pub storage: Vec<Vec<usize>>,
    pub switch_changes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ProblemMeta {
    pub grid: GridSpec,
    pub options: FormulationOptions,
    pub base_config: RadialConfig,
    pub scenarios: Vec<Scenario>,
    pub peak_steps: Vec<bool>,
    /// Step-averaged demand `[step][node]`, p.u.
    pub step_p: Vec<Vec<f64>>,
    pub step_q: Vec<Vec<f64>>,
    pub reconfiguration: bool,
    pub ultc_split: bool,
    pub decisions: DecisionColumns,
}

/// Numeric model: bounds, integrality, diagonal objective and rows.
#[derive(Debug, Clone, Default)]
pub struct MiqpModel {
    pub kinds: Vec<VarKind>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Objective `sum_j obj_diag[j] * x_j^2`.
    pub obj_diag: Vec<f64>,
    pub rows: Vec<Row>,
}

impl MiqpModel {
    pub fn n_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.obj_diag.iter().zip(x).map(|(d, v)| d * v * v).sum()
    }

    pub fn integer_columns(&self) -> Vec<usize> {
        (0..self.n_vars()).filter(|&j| self.kinds[j] != VarKind::Continuous).collect()
    }

    pub fn count_rows(&self, family: RowFamily) -> usize {
        self.rows.iter().filter(|r| r.family == family).count()
    }

    pub fn equality_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_equality()).count()
    }

    /// Largest violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.n_vars()).map(|j| (self.lb[j] - x[j]).max(x[j] - self.ub[j]).max(0.0));
        let rows = self.rows.iter().map(|r| {
            let a = r.activity(x);
            (r.lo - a).max(a - r.hi).max(0.0)
        });
        bounds.chain(rows).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct VvoProblem {
    pub vars: VariableIndex,
    pub model: MiqpModel,
    pub meta: ProblemMeta,
}

impl std::ops::Deref for VvoProblem {
    type Target = MiqpModel;
    fn deref(&self) -> &MiqpModel {
        &self.model
    }
}

impl VvoProblem {
    pub fn scenario_weight(&self, s: usize) -> f64 {
        self.meta.scenarios[s].prob / self.meta.options.horizon as f64
    }

    /// Integer fixings of the do-nothing schedule: switches at the initial
    /// configuration, nominal tap, capacitors disconnected.
    pub fn no_action_fixings(&self) -> Vec<(usize, f64)> {
        let dec = &self.meta.decisions;
        let mut out = Vec::new();
        for &(layout, col) in &dec.switches {
            out.push((col, if self.meta.base_config.is_closed(layout) { 1.0 } else { 0.0 }));
        }
        for blk in &dec.tap_blocks {
            out.extend(blk.iter().map(|&(t, col)| (col, if t == 0 { 1.0 } else { 0.0 })));
        }
        for cols in &dec.capacitors {
            out.extend(cols.iter().map(|&col| (col, 0.0)));
        }
        out
    }

    /// Groups of binaries that form one-hot (SOS1) blocks.
    pub fn one_hot_blocks(&self) -> Vec<Vec<usize>> {
        self.meta.decisions.tap_blocks.iter().map(|b| b.iter().map(|&(_, c)| c).collect()).collect()
    }

    /// Sparse text dump: variables with bounds, kind and objective weight,
    /// then rows as `lo hi nnz col:coef ...`.
    pub fn export_text(&self, mut w: impl Write) -> std::io::Result<()> {
        let kind = |k: VarKind| match k {
            VarKind::Continuous => 'C',
            VarKind::Binary => 'B',
            VarKind::Integer => 'I',
        };
        writeln!(w, "VVO-MIQP 1")?;
        writeln!(w, "# objective: sum_j diag_j * x_j^2")?;
        writeln!(w, "VARS {}", self.n_vars())?;
        for j in 0..self.n_vars() {
            writeln!(
                w,
                "{j} {} {} {:e} {:e} {:e}",
                self.vars.key(j).name(),
                kind(self.kinds[j]),
                self.lb[j],
                self.ub[j],
                self.obj_diag[j]
            )?;
        }
        writeln!(w, "ROWS {}", self.rows.len())?;
        for (i, r) in self.rows.iter().enumerate() {
            write!(w, "{i} {:?} {:e} {:e} {}", r.family, r.lo, r.hi, r.coeffs.len())?;
            for (j, a) in &r.coeffs {
                write!(w, " {j}:{a:e}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "END")
    }
}

/// Wind input: a Markov model plus the state observed at hour 0.
#[derive(Debug, Clone, Copy)]
pub struct WindInput<'a> {
    pub model: &'a WindMarkovModel,
    pub observed_state: usize,
}

struct Builder {
    vars: VariableIndex,
    kinds: Vec<VarKind>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    obj: Vec<f64>,
    rows: Vec<Row>,
}

impl Builder {
    fn var(&mut self, key: VarKey, kind: VarKind, lb: f64, ub: f64) -> usize {
        let col = self.vars.add(key);
        self.kinds.push(kind);
        self.lb.push(lb);
        self.ub.push(ub);
        self.obj.push(0.0);
        col
    }
    fn row(&mut self, family: RowFamily, coeffs: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.rows.push(Row { coeffs, lo, hi, family });
    }
    fn eq(&mut self, family: RowFamily, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.row(family, coeffs, rhs, rhs);
    }
}

/// Per-step wind-state distribution: mean of the hourly state vectors over
/// the step's hours, truncated to the most probable states.
fn step_wind_distribution(opts: &FormulationOptions, wind: &WindInput) -> Result<Vec<Vec<(usize, f64)>>> {
    let hours = opts.horizon * opts.step_hours;
    let path = propagate(wind.model, wind.observed_state, hours)?;
    let s = wind.model.states();
    let mut out = Vec::with_capacity(opts.horizon);
    for k in 0..opts.horizon {
        let mut mean = vec![0.0; s];
        for h in opts.step_clock_hours(k) {
            for (m, p) in mean.iter_mut().zip(path.at(h)) {
                *m += p / opts.step_hours as f64;
            }
        }
        let mut states: Vec<(usize, f64)> = mean.into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect();
        // Stable: ties keep the lower state first.
        states.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
        if let Some(keep) = opts.wind_states {
            states.truncate(keep);
        }
        let total: f64 = states.iter().map(|s| s.1).sum();
        states.sort_by_key(|s| s.0);
        out.push(states.into_iter().map(|(i, p)| (i, p / total)).collect());
    }
    Ok(out)
}

/// Assemble the VVO mixed-integer QP.
pub fn build_problem(
    spec: &GridSpec,
    config0: &RadialConfig,
    profiles: &DayProfileSet,
    wind: Option<WindInput>,
    opts: &FormulationOptions,
) -> Result<VvoProblem> {
    opts.validate()?;
    if config0.len() != spec.lines().len() {
        return Err(VvoError::DimensionMismatch { expected: spec.lines().len(), got: config0.len() });
    }
    if profiles.nodes() != spec.node_count() {
        return Err(VvoError::DimensionMismatch { expected: spec.node_count(), got: profiles.nodes() });
    }
    let eq = spec.equipment();
    let d = opts.disjunctive;
    let h_steps = opts.horizon;
    let dt = opts.step_hours as f64;

    // ---- scenarios -------------------------------------------------------
    let step_states: Vec<Vec<(usize, f64)>> = match (&eq.wind, wind) {
        (Some(site), Some(w)) => {
            if (w.model.rated_kw - site.rated_kw).abs() > 1e-9 {
                log::warn!("wind model rated power {} differs from the site rating {}", w.model.rated_kw, site.rated_kw);
            }
            step_wind_distribution(opts, &w)?
        }
        (Some(_), None) => return Err(VvoError::InvalidInput("grid has a wind site but no wind model was given".into())),
        (None, _) => vec![vec![(0, 1.0)]; h_steps],
    };
    let mut scenarios = Vec::new();
    for (k, states) in step_states.iter().enumerate() {
        for &(i, prob) in states {
            let wind_pu = match (&eq.wind, wind) {
                (Some(_), Some(w)) => spec.kw_to_pu(w.model.levels[i]),
                _ => 0.0,
            };
            scenarios.push(Scenario { step: k, state: i, prob, wind_pu });
        }
    }
    let wind_node = eq.wind.as_ref().map(|w| w.node - 1);

    let n_user = spec.node_count();
    let step_avg = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..h_steps)
            .map(|k| (0..n_user).map(|n| opts.step_clock_hours(k).map(|h| m[n][h - 1]).sum::<f64>() / dt).collect())
            .collect()
    };
    let step_p = step_avg(&profiles.p);
    let step_q = step_avg(&profiles.q);
    let peak_steps: Vec<bool> = (0..h_steps).map(|k| opts.is_peak_step(k)).collect();

    // ---- topology --------------------------------------------------------
    let ultc_split = opts.equipment.ultc && eq.ultc.is_some();
    let net = Network::build(spec, ultc_split);
    let switchable_any = spec.lines().iter().any(|l| l.switchable);
    let reconfiguration = opts.equipment.reconfiguration && switchable_any;
    let radial0 = check_radiality(spec, config0)?;
    if radial0 != Radiality::Radial && (!reconfiguration || opts.switching_budget == 0) {
        return Err(VvoError::InfeasibleByConstruction(format!(
            "initial configuration is {radial0:?} and cannot be switched"
        )));
    }
    let lines = spec.lines();
    let is_switch = |b: usize| reconfiguration && lines[net.branches[b].layout].switchable;
    let active: Vec<usize> = (0..net.branches.len())
        .filter(|&b| is_switch(b) || config0.is_closed(net.branches[b].layout))
        .collect();
    if reconfiguration && d < (net.n_nodes - 1) as f64 {
        return Err(VvoError::InvalidInput("disjunctive constant smaller than the fictitious supply".into()));
    }

    let mut bld = Builder {
        vars: VariableIndex::default(),
        kinds: Vec::new(),
        lb: Vec::new(),
        ub: Vec::new(),
        obj: Vec::new(),
        rows: Vec::new(),
    };
    let inf = f64::INFINITY;
    let ultc = eq.ultc.as_ref().filter(|_| ultc_split);
    let taps: Vec<i32> = ultc.map(|u| u.taps().collect()).unwrap_or_default();
    let split = net.ultc;

    // ---- shared decision variables -----------------------------------
    let mut decisions = DecisionColumns::default();
    let storage_units = if opts.equipment.storage { eq.storage.len() } else { 0 };
    for u in 0..storage_units {
        let pmax = spec.kw_to_pu(eq.storage[u].rating_kw);
        decisions.storage.push(
            (0..h_steps)
                .map(|k| bld.var(VarKey::Storage { unit: u, step: k }, VarKind::Continuous, 0.0, pmax))
                .collect(),
        );
    }
    let banks = if opts.equipment.capacitors { eq.capacitors.len() } else { 0 };
    for c in 0..banks {
        let cmax = eq.capacitors[c].modules as f64;
        decisions.capacitors.push(
            (0..h_steps)
                .map(|k| bld.var(VarKey::Capacitor { bank: c, step: k }, VarKind::Integer, 0.0, cmax))
                .collect(),
        );
    }
    if ultc.is_some() {
        let blocks = if opts.daily_tap { 1 } else { h_steps };
        for blk in 0..blocks {
            let cols = taps
                .iter()
                .map(|&t| (t, bld.var(VarKey::Tap { tap: t, block: blk }, VarKind::Binary, 0.0, 1.0)))
                .collect();
            decisions.tap_blocks.push(cols);
        }
        decisions.tap_block_of_step = (0..h_steps).map(|k| if opts.daily_tap { 0 } else { k }).collect();
    }
    let mut switch_col = vec![None; net.branches.len()];
    if reconfiguration {
        for &b in &active {
            if is_switch(b) {
                let y = bld.var(VarKey::Switch { branch: b }, VarKind::Binary, 0.0, 1.0);
                switch_col[b] = Some(y);
                decisions.switches.push((net.branches[b].layout, y));
            }
        }
    }

    // ---- per-scenario variables and rows ------------------------------
    let mut fwd_p = vec![0usize; net.branches.len()];
    let mut fwd_q = vec![0usize; net.branches.len()];
    let mut rev_p = vec![0usize; net.branches.len()];
    let mut rev_q = vec![0usize; net.branches.len()];
    let k_seg = opts.ampacity_segments;
    for (s, sc) in scenarios.iter().enumerate() {
        let weight = sc.prob / h_steps as f64;
        for &b in &active {
            fwd_p[b] = bld.var(VarKey::FlowP { branch: b, reverse: false, scen: s }, VarKind::Continuous, -inf, inf);
            fwd_q[b] = bld.var(VarKey::FlowQ { branch: b, reverse: false, scen: s }, VarKind::Continuous, -inf, inf);
            rev_p[b] = bld.var(VarKey::FlowP { branch: b, reverse: true, scen: s }, VarKind::Continuous, -inf, inf);
            rev_q[b] = bld.var(VarKey::FlowQ { branch: b, reverse: true, scen: s }, VarKind::Continuous, -inf, inf);
            let br = &net.branches[b];
            if br.kind != BranchKind::Transformer {
                bld.obj[fwd_p[b]] = weight * br.r;
                bld.obj[fwd_q[b]] = weight * br.r;
            }
        }
        let mut v = Vec::with_capacity(net.n_nodes);
        for node in 0..net.n_nodes {
            let (lo, hi) = if node == net.substation {
                (1.0, 1.0)
            } else if node < n_user {
                let nd = &spec.nodes()[node];
                (nd.vmin * nd.vmin, nd.vmax * nd.vmax)
            } else {
                let u = ultc.expect("aux node implies ULTC");
                let p = &spec.nodes()[u.from - 1];
                let (rlo, rhi) = (1.0 - u.ratio_halfwidth, 1.0 + u.ratio_halfwidth);
                ((rlo * p.vmin).powi(2), (rhi * p.vmax).powi(2))
            };
            v.push(bld.var(VarKey::VoltSq { node, scen: s }, VarKind::Continuous, lo, hi));
        }
        let psub = bld.var(VarKey::SubstationP { scen: s }, VarKind::Continuous, -inf, inf);
        let qsub = bld.var(VarKey::SubstationQ { scen: s }, VarKind::Continuous, -inf, inf);

        for &b in &active {
            let br = &net.branches[b];
            bld.eq(RowFamily::LosslessP, vec![(fwd_p[b], 1.0), (rev_p[b], 1.0)], 0.0);
            bld.eq(RowFamily::LosslessQ, vec![(fwd_q[b], 1.0), (rev_q[b], 1.0)], 0.0);
            if br.kind == BranchKind::Transformer {
                continue;
            }
            let drop = vec![
                (v[br.to], 1.0),
                (v[br.from], -1.0),
                (fwd_p[b], 2.0 * br.r),
                (fwd_q[b], 2.0 * br.x),
            ];
            match switch_col[b] {
                None => bld.eq(RowFamily::VoltageDrop, drop, 0.0),
                Some(y) => {
                    let mut upper = drop.clone();
                    upper.push((y, d));
                    bld.row(RowFamily::VoltageDropBand, upper, -inf, d);
                    let mut lower = drop;
                    lower.push((y, -d));
                    bld.row(RowFamily::VoltageDropBand, lower, -d, inf);
                }
            }
            // Inscribed regular polygon; opposite faces share a two-sided row.
            let half_width = br.smax * (std::f64::consts::PI / k_seg as f64).cos();
            for j in 0..k_seg / 2 {
                let th = 2.0 * std::f64::consts::PI * j as f64 / k_seg as f64;
                bld.row(
                    RowFamily::Ampacity,
                    vec![(fwd_p[b], th.cos()), (fwd_q[b], th.sin())],
                    -half_width,
                    half_width,
                );
            }
            if let Some(y) = switch_col[b] {
                for f in [fwd_p[b], fwd_q[b], rev_p[b], rev_q[b]] {
                    bld.row(RowFamily::Disjunctive, vec![(f, 1.0), (y, -d)], -inf, 0.0);
                    bld.row(RowFamily::Disjunctive, vec![(f, 1.0), (y, d)], 0.0, inf);
                }
            }
        }

        // Nodal balance: outgoing flows = generation - demand -/+ storage.
        let peak = peak_steps[sc.step];
        let mut bal_p: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_nodes];
        let mut bal_q: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_nodes];
        for &b in &active {
            let br = &net.branches[b];
            bal_p[br.from].push((fwd_p[b], 1.0));
            bal_q[br.from].push((fwd_q[b], 1.0));
            bal_p[br.to].push((rev_p[b], 1.0));
            bal_q[br.to].push((rev_q[b], 1.0));
        }
        bal_p[net.substation].push((psub, -1.0));
        bal_q[net.substation].push((qsub, -1.0));
        for (u, cols) in decisions.storage.iter().enumerate() {
            let node = eq.storage[u].node - 1;
            bal_p[node].push((cols[sc.step], if peak { -1.0 } else { 1.0 }));
        }
        for (c, cols) in decisions.capacitors.iter().enumerate() {
            let bank = &eq.capacitors[c];
            bal_q[bank.node - 1].push((cols[sc.step], -spec.kw_to_pu(bank.module_kvar)));
        }
        for node in 0..net.n_nodes {
            let (pd, qd) = if node < n_user { (step_p[sc.step][node], step_q[sc.step][node]) } else { (0.0, 0.0) };
            let gen = if Some(node) == wind_node { sc.wind_pu } else { 0.0 };
            bld.eq(RowFamily::BalanceP, std::mem::take(&mut bal_p[node]), gen - pd);
            bld.eq(RowFamily::BalanceQ, std::mem::take(&mut bal_q[node]), -qd);
        }

        if let (Some(u), Some(sp)) = (ultc, split) {
            let delta = u.tap_step;
            let block = decisions.tap_block_of_step[sc.step];
            let prim = &spec.nodes()[sp.primary];
            let (vmin2, vmax2) = if sp.primary == net.substation {
                (1.0, 1.0)
            } else {
                (prim.vmin * prim.vmin, prim.vmax * prim.vmax)
            };
            let mut ultc_row = vec![(v[sp.aux], 1.0), (v[sp.primary], -1.0)];
            for (t_idx, &t) in taps.iter().enumerate() {
                let kappa = decisions.tap_blocks[block][t_idx].1;
                let prod = bld.var(VarKey::TapProduct { tap: t, scen: s }, VarKind::Continuous, 0.0, vmax2);
                let tf = t as f64;
                ultc_row.push((prod, -(2.0 * delta * tf + delta * delta * tf * tf)));
                // v - (1 - kappa) vmax^2 <= prod <= v - (1 - kappa) vmin^2
                bld.row(RowFamily::McCormick, vec![(v[sp.primary], 1.0), (prod, -1.0), (kappa, vmax2)], -inf, vmax2);
                bld.row(RowFamily::McCormick, vec![(prod, 1.0), (v[sp.primary], -1.0), (kappa, -vmin2)], -inf, -vmin2);
                // kappa vmin^2 <= prod <= kappa vmax^2
                bld.row(RowFamily::McCormick, vec![(prod, 1.0), (kappa, -vmin2)], 0.0, inf);
                bld.row(RowFamily::McCormick, vec![(prod, 1.0), (kappa, -vmax2)], -inf, 0.0);
            }
            bld.eq(RowFamily::UltcVoltage, ultc_row, 0.0);
        }
    }

    // ---- shared rows -----------------------------------------------------
    for blk in &decisions.tap_blocks {
        bld.eq(RowFamily::TapOneHot, blk.iter().map(|&(_, c)| (c, 1.0)).collect(), 1.0);
    }
    let params = &eq.storage_params;
    for (u, cols) in decisions.storage.iter().enumerate() {
        let b = spec.kw_to_pu(eq.storage[u].capacity_kwh);
        let charge = params.depth_of_discharge / params.charge_efficiency * b;
        let discharge = params.discharge_efficiency * params.depth_of_discharge * b;
        let off: Vec<(usize, f64)> = (0..h_steps).filter(|&k| !peak_steps[k]).map(|k| (cols[k], dt)).collect();
        let on: Vec<(usize, f64)> = (0..h_steps).filter(|&k| peak_steps[k]).map(|k| (cols[k], dt)).collect();
        let pmax = spec.kw_to_pu(eq.storage[u].rating_kw);
        if charge > 0.0 && (off.len() as f64 * dt * pmax) < charge - 1e-12 {
            return Err(VvoError::InfeasibleByConstruction(format!(
                "storage at node {} cannot charge within the off-peak steps",
                eq.storage[u].node
            )));
        }
        if discharge > 0.0 && (on.len() as f64 * dt * pmax) < discharge - 1e-12 {
            return Err(VvoError::InfeasibleByConstruction(format!(
                "storage at node {} cannot discharge within the peak steps",
                eq.storage[u].node
            )));
        }
        bld.eq(RowFamily::StorageCharge, off, charge);
        bld.eq(RowFamily::StorageDischarge, on, discharge);
    }

    if reconfiguration {
        let fixed_closed = active.iter().filter(|&&b| switch_col[b].is_none()).count();
        let ys: Vec<(usize, f64)> = switch_col.iter().flatten().map(|&y| (y, 1.0)).collect();
        bld.eq(RowFamily::RadialityCount, ys, (net.n_nodes - 1 - fixed_closed) as f64);

        let mut kflow = vec![0usize; net.branches.len()];
        for &b in &active {
            let (lo, hi) = if switch_col[b].is_some() { (-inf, inf) } else { (-d, d) };
            kflow[b] = bld.var(VarKey::FictitiousFlow { branch: b }, VarKind::Continuous, lo, hi);
            if let Some(y) = switch_col[b] {
                bld.row(RowFamily::FictitiousBound, vec![(kflow[b], 1.0), (y, -d)], -inf, 0.0);
                bld.row(RowFamily::FictitiousBound, vec![(kflow[b], 1.0), (y, d)], 0.0, inf);
            }
        }
        let mut fb: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.n_nodes];
        for &b in &active {
            fb[net.branches[b].from].push((kflow[b], 1.0));
            fb[net.branches[b].to].push((kflow[b], -1.0));
        }
        for (node, mut coeffs) in fb.into_iter().enumerate() {
            let (lo, hi) = if node == net.substation { (0.0, (net.n_nodes - 1) as f64) } else { (-1.0, -1.0) };
            let kn = bld.var(VarKey::FictitiousLoad { node }, VarKind::Continuous, lo, hi);
            coeffs.push((kn, -1.0));
            bld.eq(RowFamily::FictitiousBalance, coeffs, 0.0);
        }

        let mut alphas = Vec::new();
        for (b, y) in switch_col.iter().enumerate() {
            let Some(y) = *y else { continue };
            let ybar = if config0.is_closed(net.branches[b].layout) { 1.0 } else { 0.0 };
            let a = bld.var(VarKey::SwitchChange { branch: b }, VarKind::Continuous, 0.0, 1.0);
            // y - ybar <= alpha and ybar - y <= alpha
            bld.row(RowFamily::SwitchChange, vec![(y, 1.0), (a, -1.0)], -inf, ybar);
            bld.row(RowFamily::SwitchChange, vec![(y, -1.0), (a, -1.0)], -inf, -ybar);
            alphas.push(a);
        }
        bld.row(
            RowFamily::SwitchBudget,
            alphas.iter().map(|&a| (a, 1.0)).collect(),
            -inf,
            opts.switching_budget as f64,
        );
        decisions.switch_changes = alphas;
    }

    Ok(VvoProblem {
        vars: bld.vars,
        model: MiqpModel { kinds: bld.kinds, lb: bld.lb, ub: bld.ub, obj_diag: bld.obj, rows: bld.rows },
        meta: ProblemMeta {
            grid: spec.clone(),
            options: opts.clone(),
            base_config: config0.clone(),
            scenarios,
            peak_steps,
            step_p,
            step_q,
            reconfiguration,
            ultc_split,
            decisions,
        },
    })
}

/// Day-ahead decisions decoded from a solution vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvoSchedule {
    pub horizon: usize,
    pub step_hours: usize,
    pub peak_steps: Vec<bool>,
    /// Closed status per layout line.
    pub switches: Vec<bool>,
    /// Tap position per step (0 = nominal ratio).
    pub taps: Vec<i32>,
    /// Connected modules `[bank][step]`.
    pub capacitor_modules: Vec<Vec<u32>>,
    /// Storage power `[unit][step]` in kW: charging (positive) in off-peak
    /// steps, discharging (positive) in peak steps.
    pub storage_kw: Vec<Vec<f64>>,
    pub expected_loss_kw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

fn round_integer(x: f64, what: &str) -> Result<f64> {
    let r = x.round();
    if (x - r).abs() > INTEGRALITY_TOL {
        return Err(VvoError::InvalidSchedule(format!("{what} = {x} is fractional")));
    }
    Ok(r)
}

pub fn extract_schedule(problem: &VvoProblem, x: &[f64]) -> Result<VvoSchedule> {
    if x.len() != problem.n_vars() {
        return Err(VvoError::DimensionMismatch { expected: problem.n_vars(), got: x.len() });
    }
    let meta = &problem.meta;
    let grid = &meta.grid;
    let eq = grid.equipment();
    let dec = &meta.decisions;
    let h = meta.options.horizon;

    let mut switches = meta.base_config.closed().to_vec();
    for &(layout, col) in &dec.switches {
        switches[layout] = round_integer(x[col], "switch")? > 0.5;
    }

    let mut taps = vec![0; h];
    if !dec.tap_blocks.is_empty() {
        let mut block_tap = Vec::with_capacity(dec.tap_blocks.len());
        for blk in &dec.tap_blocks {
            let mut chosen = None;
            for &(t, col) in blk {
                if round_integer(x[col], "tap binary")? > 0.5 {
                    if chosen.is_some() {
                        return Err(VvoError::InvalidSchedule("tap one-hot block has several ones".into()));
                    }
                    chosen = Some(t);
                }
            }
            block_tap.push(chosen.ok_or_else(|| VvoError::InvalidSchedule("tap one-hot block is empty".into()))?);
        }
        for (k, t) in taps.iter_mut().enumerate() {
            *t = block_tap[dec.tap_block_of_step[k]];
        }
    }

    let mut capacitor_modules = vec![vec![0u32; h]; eq.capacitors.len()];
    for (c, cols) in dec.capacitors.iter().enumerate() {
        for (k, &col) in cols.iter().enumerate() {
            capacitor_modules[c][k] = round_integer(x[col], "capacitor modules")? as u32;
        }
    }
    let mut storage_kw = vec![vec![0.0; h]; eq.storage.len()];
    for (u, cols) in dec.storage.iter().enumerate() {
        for (k, &col) in cols.iter().enumerate() {
            storage_kw[u][k] = grid.pu_to_kw(x[col].max(0.0));
        }
    }
    Ok(VvoSchedule {
        horizon: h,
        step_hours: meta.options.step_hours,
        peak_steps: meta.peak_steps.clone(),
        switches,
        taps,
        capacitor_modules,
        storage_kw,
        expected_loss_kw: grid.pu_to_kw(problem.objective(x)),
        gap: None,
    })
}

/// Per-unit energy residuals `(charge, discharge)` of a storage unit.
pub fn storage_energy_residual(spec: &GridSpec, schedule: &VvoSchedule, unit: usize) -> (f64, f64) {
    let eq = spec.equipment();
    let p = &eq.storage_params;
    let b = spec.kw_to_pu(eq.storage[unit].capacity_kwh);
    let dt = schedule.step_hours as f64;
    let (mut off, mut on) = (0.0, 0.0);
    for (k, kw) in schedule.storage_kw[unit].iter().enumerate() {
        let e = spec.kw_to_pu(*kw) * dt;
        if schedule.peak_steps[k] {
            on += e;
        } else {
            off += e;
        }
    }
    (
        off - p.depth_of_discharge / p.charge_efficiency * b,
        on - p.discharge_efficiency * p.depth_of_discharge * b,
    )
}

impl VvoSchedule {
    /// Schedule with every device at rest and switches at `config`.
    pub fn no_action(spec: &GridSpec, config: &RadialConfig, opts: &FormulationOptions) -> Self {
        let eq = spec.equipment();
        VvoSchedule {
            horizon: opts.horizon,
            step_hours: opts.step_hours,
            peak_steps: (0..opts.horizon).map(|k| opts.is_peak_step(k)).collect(),
            switches: config.closed().to_vec(),
            taps: vec![0; opts.horizon],
            capacitor_modules: vec![vec![0; opts.horizon]; eq.capacitors.len()],
            storage_kw: vec![vec![0.0; opts.horizon]; eq.storage.len()],
            expected_loss_kw: 0.0,
            gap: None,
        }
    }

    pub fn config(&self) -> RadialConfig {
        RadialConfig::new(self.switches.clone())
    }

    /// Check the schedule against the grid's equipment limits. With
    /// `energy_tol = Some(tol)` the storage energy equalities must hold
    /// within `tol` p.u.h; idle storage (all zeros) is always accepted.
    pub fn validate(&self, spec: &GridSpec, energy_tol: Option<f64>) -> Result<()> {
        let bad = |m: String| Err(VvoError::InvalidSchedule(m));
        let h = self.horizon;
        if self.step_hours == 0 || h * self.step_hours > HOURS || self.taps.len() != h || self.peak_steps.len() != h {
            return bad("horizon/step dimensions are inconsistent".into());
        }
        if check_radiality(spec, &self.config())? != Radiality::Radial {
            return bad("switch vector is not radial".into());
        }
        let eq = spec.equipment();
        let max_tap = eq.ultc.as_ref().map(|u| u.max_tap()).unwrap_or(0);
        if let Some(t) = self.taps.iter().find(|t| t.abs() > max_tap) {
            return bad(format!("tap {t} outside +-{max_tap}"));
        }
        if self.capacitor_modules.len() != eq.capacitors.len() {
            return bad("capacitor bank count mismatch".into());
        }
        for (bank, row) in eq.capacitors.iter().zip(&self.capacitor_modules) {
            if row.len() != h {
                return bad("capacitor schedule length mismatch".into());
            }
            if let Some(c) = row.iter().find(|&&c| c > bank.modules) {
                return bad(format!("capacitor at node {} uses {c} of {} modules", bank.node, bank.modules));
            }
        }
        if self.storage_kw.len() != eq.storage.len() {
            return bad("storage unit count mismatch".into());
        }
        for (u, (unit, row)) in eq.storage.iter().zip(&self.storage_kw).enumerate() {
            if row.len() != h {
                return bad("storage schedule length mismatch".into());
            }
            if row.iter().any(|&p| !(p >= -1e-9 && p <= unit.rating_kw + 1e-6)) {
                return bad(format!("storage at node {} exceeds its rating", unit.node));
            }
            let idle = row.iter().all(|&p| p == 0.0);
            if let (Some(tol), false) = (energy_tol, idle) {
                let (c, d) = storage_energy_residual(spec, self, u);
                if c.abs() > tol || d.abs() > tol {
                    return bad(format!("storage at node {} violates its energy balance ({c:e}, {d:e})", unit.node));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{EquipmentInventory, Line, Node};

    fn line_graph(n: usize) -> GridSpec {
        let nodes = (1..=n)
            .map(|id| Node { id, is_substation: id == 1, power_factor: 0.9, vmin: 0.9, vmax: 1.1 })
            .collect();
        let lines = (1..n)
            .map(|k| Line { from: k, to: k + 1, resistance: 0.01, reactance: 0.02, ampacity: 2.0, switchable: false, normally_closed: true })
            .collect();
        GridSpec::new(1.0, 12.66, nodes, lines, EquipmentInventory::default()).unwrap()
    }

    #[test]
    fn four_node_inventory() {
        let g = line_graph(4);
        let prof = DayProfileSet::from_active(&g, vec![vec![0.0; 24], vec![0.05; 24], vec![0.05; 24], vec![0.05; 24]]);
        let opts = FormulationOptions { horizon: 1, ..Default::default() };
        let p = build_problem(&g, &g.default_config(), &prof, None, &opts).unwrap();
        let flows = p.vars.keys().iter().filter(|k| matches!(k, VarKey::FlowP { .. } | VarKey::FlowQ { .. })).count();
        let volts = p.vars.keys().iter().filter(|k| matches!(k, VarKey::VoltSq { .. })).count();
        assert_eq!(flows, 12);
        assert_eq!(volts, 4);
        assert_eq!(p.n_vars(), 18); // plus substation P and Q
        assert_eq!(p.count_rows(RowFamily::LosslessP) + p.count_rows(RowFamily::LosslessQ), 6);
        assert_eq!(p.count_rows(RowFamily::VoltageDrop), 3);
        assert_eq!(p.count_rows(RowFamily::BalanceP) + p.count_rows(RowFamily::BalanceQ), 8);
        assert_eq!(p.equality_count(), 17);
        assert!(p.integer_columns().is_empty());
        assert!(p.obj_diag.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn options_are_validated() {
        let odd = FormulationOptions { switching_budget: 5, ..Default::default() };
        assert!(odd.validate().is_err());
        let long = FormulationOptions { horizon: 7, step_hours: 4, ..Default::default() };
        assert!(long.validate().is_err());
        let desk = FormulationOptions { horizon: 6, step_hours: 4, ..Default::default() };
        assert!(desk.validate().is_ok());
        assert_eq!((0..6).map(|k| desk.is_peak_step(k)).collect::<Vec<_>>(), vec![false, false, true, true, true, false]);
    }

    #[test]
    fn non_radial_start_without_switches_is_rejected() {
        let g = line_graph(3);
        let prof = DayProfileSet::zeros(3);
        let cfg = RadialConfig::new(vec![true, false]);
        let opts = FormulationOptions { horizon: 1, ..Default::default() };
        assert!(matches!(
            build_problem(&g, &cfg, &prof, None, &opts),
            Err(VvoError::InfeasibleByConstruction(_))
        ));
    }

    #[test]
    fn export_lists_every_row() {
        let g = line_graph(3);
        let prof = DayProfileSet::zeros(3);
        let opts = FormulationOptions { horizon: 2, ..Default::default() };
        let p = build_problem(&g, &g.default_config(), &prof, None, &opts).unwrap();
        let mut buf = Vec::new();
        p.export_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("VVO-MIQP 1"));
        assert!(text.contains(&format!("VARS {}", p.n_vars())));
        assert!(text.contains(&format!("ROWS {}", p.rows.len())));
        assert!(text.trim_end().ends_with("END"));
    }
}
