//! Smart-meter load histories and typical day profiles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::grid::GridSpec;

pub const HOURS: usize = 24;
pub const DEFAULT_WINDOW_DAYS: u32 = 30;

/// Default peak hours (clock hours 1..=24).
pub fn default_peak_hours() -> Vec<usize> {
    (9..=22).collect()
}

/// Hourly active-power records keyed by (node, day, hour), kW.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadHistory {
    records: BTreeMap<(usize, u32, u32), f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LoadRow {
    node_id: usize,
    day: u32,
    hour: u32,
    kw: f64,
}

impl LoadHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: usize, day: u32, hour: u32, kw: f64) -> Result<()> {
        if !(1..=HOURS as u32).contains(&hour) {
            return Err(VvoError::Parse(format!("hour {hour} outside 1..=24")));
        }
        if !(kw.is_finite() && kw >= 0.0) {
            return Err(VvoError::InvalidInput(format!(
                "negative or non-finite power {kw} at node {node} day {day} hour {hour}"
            )));
        }
        if self.records.insert((node, day, hour), kw).is_some() {
            return Err(VvoError::DuplicateRecord { node, day, hour });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, node: usize, day: u32, hour: u32) -> Option<f64> {
        self.records.get(&(node, day, hour)).copied()
    }

    pub fn last_day(&self) -> Option<u32> {
        self.records.keys().map(|k| k.1).max()
    }

    pub fn days(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.records.keys().map(|k| k.1).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn nodes(&self) -> Vec<usize> {
        let mut n: Vec<usize> = self.records.keys().map(|k| k.0).collect();
        n.dedup();
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32, u32, f64)> + '_ {
        self.records.iter().map(|(&(n, d, h), &kw)| (n, d, h, kw))
    }

    /// Records of a single day as a profile set (nodes absent from the
    /// history carry zero load).
    pub fn day_profile(&self, spec: &GridSpec, day: u32) -> Result<DayProfileSet> {
        typical_pattern_between(self, spec, day, day)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (node_id, day, hour, kw) in self.iter() {
            w.serialize(LoadRow { node_id, day, hour, kw }).map_err(|e| VvoError::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| VvoError::io("<loads csv>", e))
    }
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<LoadHistory> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| VvoError::io(path, e))?;
    read_loads(file)
}

/// Parse `node_id,day,hour,kw` records.
pub fn read_loads(reader: impl std::io::Read) -> Result<LoadHistory> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut history = LoadHistory::new();
    for row in rdr.deserialize::<LoadRow>() {
        let row = row.map_err(|e| VvoError::Parse(e.to_string()))?;
        history.insert(row.node_id, row.day, row.hour, row.kw)?;
    }
    if history.is_empty() {
        return Err(VvoError::NoRecords);
    }
    Ok(history)
}

/// Per-node hourly demand in p.u., `p[node - 1][hour - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfileSet {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl DayProfileSet {
    pub fn zeros(nodes: usize) -> Self {
        DayProfileSet {
            p: vec![vec![0.0; HOURS]; nodes],
            q: vec![vec![0.0; HOURS]; nodes],
        }
    }

    /// Build from active demand using each node's constant power factor.
    pub fn from_active(spec: &GridSpec, p: Vec<Vec<f64>>) -> Self {
        let q = p
            .iter()
            .zip(spec.nodes())
            .map(|(row, node)| {
                let k = reactive_ratio(node.power_factor);
                row.iter().map(|v| v * k).collect()
            })
            .collect();
        DayProfileSet { p, q }
    }

    pub fn nodes(&self) -> usize {
        self.p.len()
    }

    /// Total active demand at a clock hour (1-based), p.u.
    pub fn total_p(&self, hour: usize) -> f64 {
        self.p.iter().map(|r| r[hour - 1]).sum()
    }

    pub fn scaled(&self, k: f64) -> Self {
        let s = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        DayProfileSet { p: s(&self.p), q: s(&self.q) }
    }
}

/// `tan(arccos(pf))`
pub fn reactive_ratio(power_factor: f64) -> f64 {
    power_factor.acos().tan()
}

/// Average of each node's hour-h load over the trailing `window_days` days
/// of the history.
pub fn typical_pattern(history: &LoadHistory, window_days: u32, spec: &GridSpec) -> Result<DayProfileSet> {
    if window_days == 0 {
        return Err(VvoError::InvalidInput("window must span at least one day".into()));
    }
    let last = history.last_day().ok_or(VvoError::NoRecords)?;
    let first = last.saturating_sub(window_days - 1);
    typical_pattern_between(history, spec, first, last)
}

/// Average over days `first..=last`. Nodes that never appear in the
/// history are treated as unloaded; a node that does appear must have data
/// for every hour inside the window.
pub fn typical_pattern_between(history: &LoadHistory, spec: &GridSpec, first: u32, last: u32) -> Result<DayProfileSet> {
    let n = spec.node_count();
    let mut sums = vec![vec![0.0; HOURS]; n];
    let mut counts = vec![vec![0u32; HOURS]; n];
    let mut present = vec![false; n];
    for (node, day, hour, kw) in history.iter() {
        if node == 0 || node > n {
            return Err(VvoError::UnknownNode(node));
        }
        present[node - 1] = true;
        if (first..=last).contains(&day) {
            sums[node - 1][hour as usize - 1] += kw;
            counts[node - 1][hour as usize - 1] += 1;
        }
    }
    let mut p = vec![vec![0.0; HOURS]; n];
    for k in 0..n {
        if !present[k] {
            continue;
        }
        for h in 0..HOURS {
            if counts[k][h] == 0 {
                return Err(VvoError::MissingLoadData { node: k + 1, hour: h + 1 });
            }
            p[k][h] = spec.kw_to_pu(sums[k][h] / counts[k][h] as f64);
        }
    }
    Ok(DayProfileSet::from_active(spec, p))
}
