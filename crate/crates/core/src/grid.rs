//! Network layout, equipment inventory and radial-configuration checks.
//!
//! All electrical quantities on lines are per-unit on `base_mva` / `base_kv`.
//! Equipment ratings keep their engineering units (kW, kWh, kvar) and are
//! converted when a problem is assembled.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};

fn default_true() -> bool {
    true
}
fn default_pf() -> f64 {
    1.0
}
fn default_vmin() -> f64 {
    0.94
}
fn default_vmax() -> f64 {
    1.06
}
fn default_base_mva() -> f64 {
    1.0
}
fn default_base_kv() -> f64 {
    12.66
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(rename = "substation", default)]
    pub is_substation: bool,
    /// Constant power factor used to derive reactive demand.
    #[serde(rename = "pf", default = "default_pf")]
    pub power_factor: f64,
    #[serde(default = "default_vmin")]
    pub vmin: f64,
    #[serde(default = "default_vmax")]
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "r_pu")]
    pub resistance: f64,
    #[serde(rename = "x_pu")]
    pub reactance: f64,
    /// Apparent power limit in p.u.
    #[serde(rename = "smax_pu")]
    pub ampacity: f64,
    /// Equipped with a remotely controllable switch.
    #[serde(default)]
    pub switchable: bool,
    #[serde(default = "default_true")]
    pub normally_closed: bool,
}

impl Line {
    pub fn connects(&self, a: usize, b: usize) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageUnit {
    pub node: usize,
    #[serde(rename = "kwh")]
    pub capacity_kwh: f64,
    #[serde(rename = "kw")]
    pub rating_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorBank {
    pub node: usize,
    pub module_kvar: f64,
    pub modules: u32,
}

/// Under-load tap changer on the branch `from -> to`; the tap acts on the
/// `from` side: |v_to'| = (1 + tap * delta) |v_from|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ultc {
    pub from: usize,
    pub to: usize,
    /// Ratio half-width `a`: the ratio spans [1 - a, 1 + a].
    #[serde(rename = "a")]
    pub ratio_halfwidth: f64,
    #[serde(rename = "delta")]
    pub tap_step: f64,
}

impl Ultc {
    /// Largest tap index `a / delta`.
    pub fn max_tap(&self) -> i32 {
        (self.ratio_halfwidth / self.tap_step).round() as i32
    }

    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + tap as f64 * self.tap_step
    }

    pub fn taps(&self) -> impl Iterator<Item = i32> {
        let t = self.max_tap();
        -t..=t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    #[serde(rename = "beta_ch")]
    pub charge_efficiency: f64,
    #[serde(rename = "beta_dis")]
    pub discharge_efficiency: f64,
    #[serde(rename = "dod")]
    pub depth_of_discharge: f64,
}

impl Default for StorageParams {
    fn default() -> Self {
        StorageParams {
            charge_efficiency: 0.85,
            discharge_efficiency: 0.85,
            depth_of_discharge: 0.75,
        }
    }
}

/// Wind turbine site; generation is injected at unit power factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSite {
    pub node: usize,
    pub rated_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EquipmentInventory {
    #[serde(default)]
    pub storage: Vec<StorageUnit>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorBank>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ultc: Option<Ultc>,
    #[serde(rename = "dss_params", default)]
    pub storage_params: StorageParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<WindSite>,
}

/// Validated network layout plus equipment. Construct through
/// [`GridSpec::new`] or the JSON loaders; both run the full validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct GridSpec {
    base_mva: f64,
    base_kv: f64,
    nodes: Vec<Node>,
    lines: Vec<Line>,
    equipment: EquipmentInventory,
}

/// On-disk JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridFile {
    #[serde(default = "default_base_mva")]
    base_mva: f64,
    #[serde(default = "default_base_kv")]
    base_kv: f64,
    nodes: Vec<Node>,
    lines: Vec<Line>,
    #[serde(flatten)]
    equipment: EquipmentInventory,
}

impl TryFrom<GridFile> for GridSpec {
    type Error = VvoError;

    fn try_from(f: GridFile) -> Result<Self> {
        GridSpec::new(f.base_mva, f.base_kv, f.nodes, f.lines, f.equipment)
    }
}

impl From<GridSpec> for GridFile {
    fn from(g: GridSpec) -> Self {
        GridFile {
            base_mva: g.base_mva,
            base_kv: g.base_kv,
            nodes: g.nodes,
            lines: g.lines,
            equipment: g.equipment,
        }
    }
}

pub fn load_grid_spec(path: impl AsRef<Path>) -> Result<GridSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| VvoError::io(path, e))?;
    GridSpec::from_json(&text)
}

impl GridSpec {
    pub fn new(
        base_mva: f64,
        base_kv: f64,
        mut nodes: Vec<Node>,
        lines: Vec<Line>,
        equipment: EquipmentInventory,
    ) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        let spec = GridSpec {
            base_mva,
            base_kv,
            nodes,
            lines,
            equipment,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Deserialize the raw file first so validation errors keep their type.
        let raw: GridFile = serde_json::from_str(text).map_err(|e| VvoError::Parse(e.to_string()))?;
        GridSpec::try_from(raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid spec serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| VvoError::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0 && self.base_kv > 0.0) {
            return Err(VvoError::InvalidGrid("bases must be positive".into()));
        }
        if self.nodes.is_empty() {
            return Err(VvoError::InvalidGrid("no nodes".into()));
        }
        if let Some(w) = self.nodes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(VvoError::DuplicateNode(w[0].id));
        }
        for (k, n) in self.nodes.iter().enumerate() {
            if n.id != k + 1 {
                return Err(VvoError::NonContiguousNodes(k + 1));
            }
            if !(n.power_factor > 0.0 && n.power_factor <= 1.0) {
                return Err(VvoError::InvalidGrid(format!("node {}: power factor outside (0, 1]", n.id)));
            }
            if !(n.vmin > 0.0 && n.vmin < 1.0 && n.vmax > 1.0) {
                return Err(VvoError::InvalidGrid(format!("node {}: need 0 < vmin < 1 < vmax", n.id)));
            }
        }
        let subs = self.nodes.iter().filter(|n| n.is_substation).count();
        if subs != 1 {
            return Err(VvoError::InvalidGrid(format!(
                "exactly one substation is supported, found {subs}"
            )));
        }
        let n = self.nodes.len();
        for (k, l) in self.lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if end == 0 || end > n {
                    return Err(VvoError::UnknownNode(end));
                }
            }
            if l.from == l.to {
                return Err(VvoError::InvalidGrid(format!("line {k} is a self-loop at node {}", l.from)));
            }
            if !(l.resistance >= 0.0 && l.reactance >= 0.0) || (l.resistance == 0.0 && l.reactance == 0.0) {
                return Err(VvoError::ZeroImpedance(l.from, l.to));
            }
            if !(l.ampacity > 0.0) {
                return Err(VvoError::InvalidGrid(format!("line ({}, {}): ampacity must be positive", l.from, l.to)));
            }
            if self.lines[..k].iter().any(|o| o.connects(l.from, l.to)) {
                return Err(VvoError::InvalidGrid(format!("parallel lines between {} and {}", l.from, l.to)));
            }
        }
        // Lines that are open and cannot be switched never carry power.
        let usable: Vec<bool> = self.lines.iter().map(|l| l.switchable || l.normally_closed).collect();
        if let Some(missing) = self.unreachable_node(&usable) {
            return Err(VvoError::DisconnectedLayout(missing));
        }

        let eq = &self.equipment;
        for s in &eq.storage {
            self.check_node(s.node)?;
            if !(s.capacity_kwh >= 0.0 && s.rating_kw >= 0.0) {
                return Err(VvoError::InvalidGrid(format!("storage at node {}: negative rating", s.node)));
            }
        }
        for c in &eq.capacitors {
            self.check_node(c.node)?;
            if !(c.module_kvar >= 0.0) {
                return Err(VvoError::InvalidGrid(format!("capacitor at node {}: negative module size", c.node)));
            }
        }
        let p = &eq.storage_params;
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(in_open_unit(p.charge_efficiency)
            && in_open_unit(p.discharge_efficiency)
            && p.depth_of_discharge > 0.0
            && p.depth_of_discharge <= 1.0)
        {
            return Err(VvoError::InvalidGrid("storage efficiencies must lie in (0,1), DOD in (0,1]".into()));
        }
        if let Some(u) = &eq.ultc {
            self.check_node(u.from)?;
            self.check_node(u.to)?;
            if !(u.ratio_halfwidth > 0.0 && u.tap_step > 0.0) {
                return Err(VvoError::InvalidGrid("ULTC a and delta must be positive".into()));
            }
            let ratio = u.ratio_halfwidth / u.tap_step;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                return Err(VvoError::InvalidGrid(format!("ULTC a/delta = {ratio} is not a positive integer")));
            }
            let line = self
                .lines
                .iter()
                .find(|l| l.connects(u.from, u.to))
                .ok_or_else(|| VvoError::InvalidGrid(format!("no line for ULTC ({}, {})", u.from, u.to)))?;
            if line.switchable || !line.normally_closed {
                return Err(VvoError::InvalidGrid("the ULTC branch must be a fixed, closed line".into()));
            }
        }
        if let Some(w) = &eq.wind {
            self.check_node(w.node)?;
            if !(w.rated_kw > 0.0) {
                return Err(VvoError::InvalidGrid("wind rated power must be positive".into()));
            }
        }
        Ok(())
    }

    fn check_node(&self, id: usize) -> Result<()> {
        if id == 0 || id > self.nodes.len() {
            Err(VvoError::UnknownNode(id))
        } else {
            Ok(())
        }
    }

    /// First node (by id) not reachable from the substation over `active` lines.
    fn unreachable_node(&self, active: &[bool]) -> Option<usize> {
        let seen = self.reachable(active);
        seen.iter().position(|s| !s).map(|k| k + 1)
    }

    fn reachable(&self, active: &[bool]) -> Vec<bool> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (l, on) in self.lines.iter().zip(active) {
            if *on {
                adj[l.from - 1].push(l.to - 1);
                adj[l.to - 1].push(l.from - 1);
            }
        }
        let mut seen = vec![false; n];
        let root = self.substation() - 1;
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }
    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn node(&self, id: usize) -> Option<&Node> {
        id.checked_sub(1).and_then(|k| self.nodes.get(k))
    }
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }
    pub fn equipment(&self) -> &EquipmentInventory {
        &self.equipment
    }
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
    /// Id of the (single) substation node.
    pub fn substation(&self) -> usize {
        self.nodes.iter().find(|n| n.is_substation).map(|n| n.id).expect("validated")
    }

    pub fn line_index(&self, a: usize, b: usize) -> Option<usize> {
        self.lines.iter().position(|l| l.connects(a, b))
    }

    /// kW (or kvar) to per-unit.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (1000.0 * self.base_mva)
    }
    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * 1000.0 * self.base_mva
    }

    /// Switch statuses with every line at its normal position.
    pub fn default_config(&self) -> RadialConfig {
        RadialConfig::new(self.lines.iter().map(|l| l.normally_closed).collect())
    }

    /// Copy of this grid with the equipment inventory replaced.
    pub fn with_equipment(&self, equipment: EquipmentInventory) -> Result<GridSpec> {
        GridSpec::new(self.base_mva, self.base_kv, self.nodes.clone(), self.lines.clone(), equipment)
    }

    /// Copy of this grid with line switchability replaced.
    pub fn with_switchable(&self, switchable: impl Fn(&Line) -> bool) -> Result<GridSpec> {
        let lines = self
            .lines
            .iter()
            .map(|l| Line {
                switchable: switchable(l),
                ..l.clone()
            })
            .collect();
        GridSpec::new(self.base_mva, self.base_kv, self.nodes.clone(), lines, self.equipment.clone())
    }
}

/// Switch status per layout line (`true` = closed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RadialConfig {
    closed: Vec<bool>,
}

impl RadialConfig {
    pub fn new(closed: Vec<bool>) -> Self {
        RadialConfig { closed }
    }
    pub fn closed(&self) -> &[bool] {
        &self.closed
    }
    pub fn is_closed(&self, line: usize) -> bool {
        self.closed[line]
    }
    pub fn len(&self) -> usize {
        self.closed.len()
    }
    pub fn is_empty(&self) -> bool {
        self.closed.is_empty()
    }
    pub fn closed_count(&self) -> usize {
        self.closed.iter().filter(|c| **c).count()
    }
    pub fn set(&mut self, line: usize, closed: bool) {
        self.closed[line] = closed;
    }

    /// Number of lines whose status differs from `other`.
    pub fn switching_distance(&self, other: &RadialConfig) -> usize {
        self.closed.iter().zip(&other.closed).filter(|(a, b)| a != b).count()
    }

    /// Whether every non-switchable line sits at its normal position.
    pub fn respects_fixed(&self, spec: &GridSpec) -> bool {
        spec.lines
            .iter()
            .zip(&self.closed)
            .all(|(l, c)| l.switchable || *c == l.normally_closed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radiality {
    Radial,
    NotConnected,
    /// N - 1 closed lines that still leave the graph disconnected, which
    /// means some closed lines form a loop.
    HasCycle,
    WrongLineCount,
}

pub fn check_radiality(spec: &GridSpec, config: &RadialConfig) -> Result<Radiality> {
    if config.len() != spec.lines.len() {
        return Err(VvoError::DimensionMismatch {
            expected: spec.lines.len(),
            got: config.len(),
        });
    }
    let connected = spec.unreachable_node(&config.closed).is_none();
    let count = config.closed_count();
    let target = spec.node_count() - 1;
    Ok(if count == target {
        if connected {
            Radiality::Radial
        } else {
            Radiality::HasCycle
        }
    } else if !connected {
        Radiality::NotConnected
    } else {
        Radiality::WrongLineCount
    })
}

/// Nodes joined to `node` by a closed line.
pub fn neighbors(spec: &GridSpec, config: &RadialConfig, node: usize) -> Result<BTreeSet<usize>> {
    spec.check_node(node)?;
    if config.len() != spec.lines.len() {
        return Err(VvoError::DimensionMismatch {
            expected: spec.lines.len(),
            got: config.len(),
        });
    }
    Ok(spec
        .lines
        .iter()
        .zip(&config.closed)
        .filter(|(_, c)| **c)
        .filter_map(|(l, _)| {
            if l.from == node {
                Some(l.to)
            } else if l.to == node {
                Some(l.from)
            } else {
                None
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> GridSpec {
        GridSpec::new(
            1.0,
            12.66,
            vec![
                Node { id: 1, is_substation: true, power_factor: 1.0, vmin: 0.94, vmax: 1.06 },
                Node { id: 2, is_substation: false, power_factor: 0.9, vmin: 0.94, vmax: 1.06 },
            ],
            vec![Line { from: 1, to: 2, resistance: 0.01, reactance: 0.01, ampacity: 1.0, switchable: false, normally_closed: true }],
            EquipmentInventory::default(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_grid_is_valid() {
        let g = two_node();
        assert_eq!(g.node_count(), 2);
        let cfg = g.default_config();
        assert_eq!(check_radiality(&g, &cfg).unwrap(), Radiality::Radial);
        assert_eq!(neighbors(&g, &cfg, 2).unwrap(), BTreeSet::from([1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = two_node();
        let mut lines = g.lines.clone();
        lines[0].resistance = 0.0;
        lines[0].reactance = 0.0;
        assert!(matches!(
            GridSpec::new(1.0, 12.66, g.nodes.clone(), lines, EquipmentInventory::default()),
            Err(VvoError::ZeroImpedance(1, 2))
        ));

        let mut nodes = g.nodes.clone();
        nodes[1].id = 1;
        assert!(matches!(
            GridSpec::new(1.0, 12.66, nodes, g.lines.clone(), EquipmentInventory::default()),
            Err(VvoError::DuplicateNode(1))
        ));

        let eq = EquipmentInventory {
            capacitors: vec![CapacitorBank { node: 7, module_kvar: 100.0, modules: 2 }],
            ..Default::default()
        };
        assert!(matches!(g.with_equipment(eq), Err(VvoError::UnknownNode(7))));

        let eq = EquipmentInventory {
            ultc: Some(Ultc { from: 1, to: 2, ratio_halfwidth: 0.1, tap_step: 0.03 }),
            ..Default::default()
        };
        assert!(matches!(g.with_equipment(eq), Err(VvoError::InvalidGrid(_))));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = two_node();
        let cfg = RadialConfig::new(vec![true, false]);
        assert!(matches!(check_radiality(&g, &cfg), Err(VvoError::DimensionMismatch { .. })));
    }

    #[test]
    fn parse_error_reported() {
        assert!(matches!(GridSpec::from_json("{ not json"), Err(VvoError::Parse(_))));
    }

    #[test]
    fn ultc_taps() {
        let u = Ultc { from: 6, to: 26, ratio_halfwidth: 0.1, tap_step: 0.01 };
        assert_eq!(u.max_tap(), 10);
        assert_eq!(u.taps().count(), 21);
        assert!((u.ratio(-10) - 0.9).abs() < 1e-12);
    }
}
