//! First-order homogeneous Markov chain for wind generation.
//!
//! State indices are 0-based throughout the API; state `i` covers the
//! power interval `[i w, (i + 1) w)` with `w = rated / S` (the last interval
//! is closed at the rated power).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindMarkovModel {
    /// Mean generation of each state, kW.
    pub levels: Vec<f64>,
    /// Row-stochastic transition matrix, `matrix[i][j] = P(i -> j)`.
    pub matrix: Vec<Vec<f64>>,
    pub rated_kw: f64,
}

/// State probability vectors for hours 0..=H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProbabilityPath {
    pub probs: Vec<Vec<f64>>,
}

impl StateProbabilityPath {
    pub fn hours(&self) -> usize {
        self.probs.len() - 1
    }
    pub fn at(&self, hour: usize) -> &[f64] {
        &self.probs[hour]
    }
}

impl WindMarkovModel {
    pub fn new(levels: Vec<f64>, matrix: Vec<Vec<f64>>, rated_kw: f64) -> Result<Self> {
        let model = WindMarkovModel { levels, matrix, rated_kw };
        model.validate()?;
        Ok(model)
    }

    /// Single-state model with constant generation.
    pub fn constant(level_kw: f64, rated_kw: f64) -> Result<Self> {
        WindMarkovModel::new(vec![level_kw], vec![vec![1.0]], rated_kw)
    }

    pub fn states(&self) -> usize {
        self.levels.len()
    }

    fn validate(&self) -> Result<()> {
        let s = self.levels.len();
        if s == 0 {
            return Err(VvoError::InvalidInput("wind model without states".into()));
        }
        if self.matrix.len() != s || self.matrix.iter().any(|r| r.len() != s) {
            return Err(VvoError::DimensionMismatch { expected: s, got: self.matrix.len() });
        }
        for (i, row) in self.matrix.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(VvoError::InvalidInput(format!("transition row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(VvoError::InvalidInput(format!("transition row {i} sums to {sum}")));
            }
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0])
            || self.levels.iter().any(|&x| x < 0.0 || x > self.rated_kw)
        {
            return Err(VvoError::InvalidInput("state levels must increase within [0, rated]".into()));
        }
        Ok(())
    }

    /// Estimate a model from an hourly series.
    pub fn estimate(series_kw: &[f64], states: usize, rated_kw: f64) -> Result<Self> {
        let (levels, seq) = discretize(series_kw, states, rated_kw)?;
        let matrix = estimate_transitions(&seq, states)?;
        WindMarkovModel::new(levels, matrix, rated_kw)
    }

    /// State whose interval contains `kw`.
    pub fn state_of(&self, kw: f64) -> usize {
        bin_of(kw, self.states(), self.rated_kw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: WindMarkovModel = serde_json::from_str(text).map_err(|e| VvoError::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

fn bin_of(kw: f64, states: usize, rated_kw: f64) -> usize {
    let w = rated_kw / states as f64;
    ((kw / w).floor() as usize).min(states - 1)
}

/// Equal-width binning of `[0, rated]` into `states` intervals. Returns
/// the per-state mean levels (bin midpoint for empty bins) and the state
/// index of every sample.
pub fn discretize(series_kw: &[f64], states: usize, rated_kw: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if series_kw.is_empty() {
        return Err(VvoError::InvalidInput("empty wind series".into()));
    }
    if states < 2 {
        return Err(VvoError::InvalidInput("need at least 2 states".into()));
    }
    if !(rated_kw > 0.0) {
        return Err(VvoError::InvalidInput("rated power must be positive".into()));
    }
    if let Some(bad) = series_kw.iter().find(|&&x| !(0.0..=rated_kw).contains(&x)) {
        return Err(VvoError::InvalidInput(format!("wind sample {bad} outside [0, {rated_kw}]")));
    }
    let seq: Vec<usize> = series_kw.iter().map(|&x| bin_of(x, states, rated_kw)).collect();
    let mut sums = vec![0.0; states];
    let mut counts = vec![0usize; states];
    for (&x, &s) in series_kw.iter().zip(&seq) {
        sums[s] += x;
        counts[s] += 1;
    }
    let w = rated_kw / states as f64;
    let levels = (0..states)
        .map(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { (i as f64 + 0.5) * w })
        .collect();
    Ok((levels, seq))
}

/// Maximum-likelihood transition matrix `n_ij / sum_j n_ij`. States never
/// left in the data get a self-loop.
pub fn estimate_transitions(seq: &[usize], states: usize) -> Result<Vec<Vec<f64>>> {
    if seq.len() < 2 {
        return Err(VvoError::InvalidInput("need at least two observations".into()));
    }
    if let Some(&bad) = seq.iter().find(|&&s| s >= states) {
        return Err(VvoError::InvalidInput(format!("state {bad} out of range")));
    }
    let mut counts = vec![vec![0u64; states]; states];
    for w in seq.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                log::warn!("wind state {i} has no outgoing transitions; using a self-loop");
                let mut r = vec![0.0; states];
                r[i] = 1.0;
                r
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect())
}

/// Chapman-Kolmogorov propagation `pi(h + 1) = T' pi(h)` from an observed
/// state at hour 0.
pub fn propagate(model: &WindMarkovModel, observed_state: usize, hours: usize) -> Result<StateProbabilityPath> {
    let s = model.states();
    if observed_state >= s {
        return Err(VvoError::InvalidInput(format!("observed state {observed_state} not in 0..{s}")));
    }
    let mut pi = vec![0.0; s];
    pi[observed_state] = 1.0;
    Ok(StateProbabilityPath { probs: propagate_from(model, pi, hours) })
}

/// Propagate an arbitrary initial distribution `hours` steps.
pub fn propagate_from(model: &WindMarkovModel, start: Vec<f64>, hours: usize) -> Vec<Vec<f64>> {
    let s = model.states();
    let mut probs = Vec::with_capacity(hours + 1);
    probs.push(start);
    for h in 0..hours {
        let prev = &probs[h];
        let next: Vec<f64> = (0..s).map(|j| (0..s).map(|i| prev[i] * model.matrix[i][j]).sum()).collect();
        probs.push(next);
    }
    probs
}

/// Read a `timestamp,power_kw` CSV into a series.
pub fn read_wind_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| VvoError::io(path, e))?;
    read_wind_series(file)
}

pub fn read_wind_series(reader: impl std::io::Read) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        #[allow(dead_code)]
        timestamp: String,
        power_kw: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| VvoError::Parse(e.to_string()))?;
        if !row.power_kw.is_finite() {
            return Err(VvoError::Parse("non-finite wind power".into()));
        }
        out.push(row.power_kw);
    }
    if out.is_empty() {
        return Err(VvoError::NoRecords);
    }
    Ok(out)
}

pub fn write_wind_series(writer: impl std::io::Write, series_kw: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "power_kw"]).map_err(|e| VvoError::Parse(e.to_string()))?;
    for (h, p) in series_kw.iter().enumerate() {
        let stamp = format!("d{:03}h{:02}", h / 24 + 1, h % 24 + 1);
        w.write_record([stamp, format!("{p:.4}")]).map_err(|e| VvoError::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| VvoError::io("<wind csv>", e))
}
