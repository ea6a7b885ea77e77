//! Seeded synthetic data: residential-style load histories and
//! autocorrelated wind power series.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::loads::{LoadHistory, HOURS};

/// Normalized residential day shape (peak 1.0), clock hours 1..=24: night
/// trough, morning ramp, midday plateau and an evening peak around 19:00.
pub const RESIDENTIAL_SHAPE: [f64; HOURS] = [
    0.55, 0.50, 0.47, 0.46, 0.46, 0.50, 0.62, 0.75, 0.80, 0.78, 0.76, 0.76, 0.77, 0.75, 0.74, 0.76, 0.84, 0.95,
    1.00, 0.98, 0.92, 0.84, 0.74, 0.63,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    /// Nominal (peak-hour) demand per node, kW; index = node id - 1.
    pub nominal_kw: Vec<f64>,
    /// Multiplier applied to every nominal value.
    pub scale: f64,
    /// Standard deviation of the day-level factor.
    pub day_sigma: f64,
    /// Standard deviation of the independent hourly noise.
    pub hour_sigma: f64,
    pub shape: Vec<f64>,
}

impl LoadParams {
    /// Scaled so the feeder peak is about 2.15 MW on the 33-node case,
    /// which puts the bare-system minimum voltage near 0.95 p.u.
    pub const DEFAULT_SCALE: f64 = 0.58;

    pub fn new(nominal_kw: Vec<f64>) -> Self {
        LoadParams { nominal_kw, scale: Self::DEFAULT_SCALE, day_sigma: 0.04, hour_sigma: 0.05, shape: RESIDENTIAL_SHAPE.to_vec() }
    }
}

/// `days` days of hourly records for every node with nonzero nominal load.
pub fn synthetic_loads(params: &LoadParams, days: u32, seed: u64) -> Result<LoadHistory> {
    if params.shape.len() != HOURS {
        return Err(VvoError::InvalidInput("load shape must have 24 entries".into()));
    }
    if !(params.scale >= 0.0 && params.day_sigma >= 0.0 && params.hour_sigma >= 0.0) {
        return Err(VvoError::InvalidInput("load generator parameters must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day_noise = Normal::new(0.0, params.day_sigma).map_err(|e| VvoError::InvalidInput(e.to_string()))?;
    let hour_noise = Normal::new(0.0, params.hour_sigma).map_err(|e| VvoError::InvalidInput(e.to_string()))?;
    let mut history = LoadHistory::new();
    for day in 1..=days {
        let day_factor = (1.0 + day_noise.sample(&mut rng)).max(0.5);
        for (k, &nominal) in params.nominal_kw.iter().enumerate() {
            if nominal <= 0.0 {
                continue;
            }
            for hour in 1..=HOURS {
                let noise = (1.0 + hour_noise.sample(&mut rng)).max(0.0);
                let kw = nominal * params.scale * params.shape[hour - 1] * day_factor * noise;
                history.insert(k + 1, day, hour as u32, kw)?;
            }
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    pub rated_kw: f64,
    /// Long-run mean wind speed, m/s.
    pub mean_speed: f64,
    /// Hour-to-hour AR(1) coefficient.
    pub persistence: f64,
    /// Innovation standard deviation, m/s.
    pub sigma: f64,
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
}

impl WindParams {
    pub fn new(rated_kw: f64) -> Self {
        WindParams { rated_kw, mean_speed: 7.5, persistence: 0.9, sigma: 1.2, cut_in: 3.0, rated_speed: 12.0, cut_out: 25.0 }
    }

    /// Cubic power curve between cut-in and rated speed.
    pub fn power_kw(&self, speed: f64) -> f64 {
        if speed < self.cut_in || speed >= self.cut_out {
            0.0
        } else if speed >= self.rated_speed {
            self.rated_kw
        } else {
            let c3 = self.cut_in.powi(3);
            self.rated_kw * (speed.powi(3) - c3) / (self.rated_speed.powi(3) - c3)
        }
    }
}

/// Hourly wind power from an AR(1) wind speed process.
pub fn synthetic_wind(params: &WindParams, hours: usize, seed: u64) -> Result<Vec<f64>> {
    if !(params.rated_kw > 0.0 && params.persistence.abs() < 1.0 && params.sigma >= 0.0) {
        return Err(VvoError::InvalidInput("invalid wind generator parameters".into()));
    }
    if !(params.cut_in < params.rated_speed && params.rated_speed < params.cut_out) {
        return Err(VvoError::InvalidInput("power curve speeds must increase".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sigma).map_err(|e| VvoError::InvalidInput(e.to_string()))?;
    let mut speed = params.mean_speed;
    let mut out = Vec::with_capacity(hours);
    for _ in 0..hours {
        speed = (params.mean_speed + params.persistence * (speed - params.mean_speed) + noise.sample(&mut rng)).max(0.0);
        out.push(params.power_kw(speed));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_are_seeded_and_complete() {
        let p = LoadParams::new(vec![0.0, 100.0, 50.0]);
        let a = synthetic_loads(&p, 3, 7).unwrap();
        let b = synthetic_loads(&p, 3, 7).unwrap();
        let c = synthetic_loads(&p, 3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 2 * 3 * 24);
        assert!(a.get(1, 1, 1).is_none());
    }

    #[test]
    fn power_curve() {
        let w = WindParams::new(1000.0);
        assert_eq!(w.power_kw(2.0), 0.0);
        assert_eq!(w.power_kw(12.0), 1000.0);
        assert_eq!(w.power_kw(30.0), 0.0);
        let mid = w.power_kw(8.0);
        assert!((mid - 1000.0 * (512.0 - 27.0) / (1728.0 - 27.0)).abs() < 1e-9);
        let s = synthetic_wind(&w, 500, 3).unwrap();
        assert!(s.iter().all(|&p| (0.0..=1000.0).contains(&p)));
        assert_eq!(s, synthetic_wind(&w, 500, 3).unwrap());
    }
}
