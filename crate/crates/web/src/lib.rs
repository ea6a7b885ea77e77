//! Browser bindings for a handful of interactive operations on the
//! 33-node feeder. Every method returns a JSON string; failures come back
//! as `{"error": "..."}` so the page never has to catch exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use vvo_core::cases::{baran_wu_33, baran_wu_33_loads};
use vvo_core::grid::{check_radiality, GridSpec, RadialConfig, Radiality};
use vvo_core::powerflow::{compare_solutions, lindistflow_solve, newton_ac_solve, InjectionSet};
use vvo_core::synthetic::{synthetic_wind, WindParams};
use vvo_core::wind::{propagate, WindMarkovModel};

const WIND_HISTORY_HOURS: usize = 24 * 60;

#[derive(Serialize)]
struct LineView {
    index: usize,
    from: usize,
    to: usize,
    switchable: bool,
    closed: bool,
}

#[derive(Serialize)]
struct ToggleView {
    line: usize,
    closed: bool,
    radiality: Radiality,
}

#[derive(Serialize)]
pub struct FlowView {
    pub radiality: Radiality,
    pub tap_ratio: f64,
    pub newton_v: Vec<f64>,
    pub lindistflow_v: Vec<f64>,
    pub newton_loss_kw: f64,
    pub lindistflow_loss_kw: f64,
    pub newton_iterations: usize,
    pub max_abs_dv: f64,
    pub vmin: f64,
}

#[derive(Serialize)]
pub struct ForecastView {
    pub levels_kw: Vec<f64>,
    pub observed_state: usize,
    /// `probs[h][s]` for h = 0..=hours.
    pub probs: Vec<Vec<f64>>,
    pub expected_kw: Vec<f64>,
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub struct Feeder {
    grid: GridSpec,
    config: RadialConfig,
    wind: WindMarkovModel,
}

#[wasm_bindgen]
impl Feeder {
    /// Full 33-node feeder with a wind model estimated from sixty days of
    /// seeded synthetic output.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Feeder, JsError> {
        Feeder::build(seed).map_err(|e| JsError::new(&e))
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn max_tap(&self) -> i32 {
        self.grid.equipment().ultc.as_ref().map_or(0, |u| u.max_tap())
    }

    pub fn wind_node(&self) -> usize {
        self.grid.equipment().wind.as_ref().map_or(0, |w| w.node)
    }

    pub fn lines(&self) -> String {
        let v: Vec<LineView> = self
            .grid
            .lines()
            .iter()
            .enumerate()
            .map(|(k, l)| LineView {
                index: k,
                from: l.from,
                to: l.to,
                switchable: l.switchable,
                closed: self.config.is_closed(k),
            })
            .collect();
        to_json(Ok(v))
    }

    /// Flip one switchable line and report whether the result is radial.
    pub fn toggle(&mut self, line: usize) -> String {
        to_json(self.toggle_line(line))
    }

    /// Restore the normal switch positions.
    pub fn reset(&mut self) {
        self.config = self.grid.default_config();
    }

    /// Newton and LinDistFlow for the current configuration.
    pub fn flow(&self, load_scale: f64, tap: i32, wind_kw: f64) -> String {
        to_json(self.flow_view(load_scale, tap, wind_kw))
    }

    /// State probabilities for `hours` steps ahead of the state holding
    /// `observed_kw`.
    pub fn forecast(&self, observed_kw: f64, hours: usize) -> String {
        to_json(self.forecast_view(observed_kw, hours))
    }
}

impl Feeder {
    pub fn build(seed: u32) -> Result<Feeder, String> {
        let grid = baran_wu_33();
        let rated = grid.equipment().wind.as_ref().map_or(1000.0, |w| w.rated_kw);
        let series = synthetic_wind(&WindParams::new(rated), WIND_HISTORY_HOURS, seed as u64).map_err(|e| e.to_string())?;
        let wind = WindMarkovModel::estimate(&series, 10, rated).map_err(|e| e.to_string())?;
        let config = grid.default_config();
        Ok(Feeder { grid, config, wind })
    }

    pub fn config(&self) -> &RadialConfig {
        &self.config
    }

    fn toggle_line(&mut self, line: usize) -> Result<ToggleView, String> {
        let l = self.grid.lines().get(line).ok_or_else(|| format!("no line {line}"))?;
        if !l.switchable {
            return Err(format!("line {}-{} is not switchable", l.from, l.to));
        }
        let closed = !self.config.is_closed(line);
        self.config.set(line, closed);
        let radiality = check_radiality(&self.grid, &self.config).map_err(|e| e.to_string())?;
        Ok(ToggleView { line, closed, radiality })
    }

    pub fn flow_view(&self, load_scale: f64, tap: i32, wind_kw: f64) -> Result<FlowView, String> {
        if !(load_scale.is_finite() && load_scale >= 0.0) {
            return Err("load scale must be a nonnegative number".into());
        }
        let radiality = check_radiality(&self.grid, &self.config).map_err(|e| e.to_string())?;
        if radiality != Radiality::Radial {
            return Err(format!("configuration is not radial ({radiality:?})"));
        }
        let g = &self.grid;
        let (p, q): (Vec<f64>, Vec<f64>) =
            baran_wu_33_loads().iter().map(|&(p, q)| (g.kw_to_pu(p * load_scale), g.kw_to_pu(q * load_scale))).unzip();
        let mut inj = InjectionSet::from_demand(p, q);
        if let Some(site) = &g.equipment().wind {
            inj.p_gen[site.node - 1] += g.kw_to_pu(wind_kw.clamp(0.0, site.rated_kw));
        }
        let ratio = match &g.equipment().ultc {
            Some(u) if tap.abs() <= u.max_tap() => u.ratio(tap),
            Some(u) => return Err(format!("tap must lie in -{0}..={0}", u.max_tap())),
            None => 1.0,
        };
        let newton = newton_ac_solve(g, &self.config, &inj, ratio).map_err(|e| e.to_string())?;
        let lin = lindistflow_solve(g, &self.config, &inj, ratio).map_err(|e| e.to_string())?;
        let cmp = compare_solutions(&lin, &newton).map_err(|e| e.to_string())?;
        let newton_v = newton.voltages();
        let vmin = newton_v.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(FlowView {
            radiality,
            tap_ratio: ratio,
            lindistflow_v: lin.voltages(),
            newton_v,
            newton_loss_kw: g.pu_to_kw(newton.loss),
            lindistflow_loss_kw: g.pu_to_kw(lin.loss),
            newton_iterations: newton.iterations,
            max_abs_dv: cmp.max_abs_dv,
            vmin,
        })
    }

    pub fn forecast_view(&self, observed_kw: f64, hours: usize) -> Result<ForecastView, String> {
        if hours == 0 || hours > 168 {
            return Err("hours must lie in 1..=168".into());
        }
        let observed_state = self.wind.state_of(observed_kw);
        let path = propagate(&self.wind, observed_state, hours).map_err(|e| e.to_string())?;
        let expected_kw =
            path.probs.iter().map(|pi| pi.iter().zip(&self.wind.levels).map(|(p, l)| p * l).sum()).collect();
        Ok(ForecastView { levels_kw: self.wind.levels.clone(), observed_state, probs: path.probs, expected_kw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn switch_index(f: &Feeder, a: usize, b: usize) -> usize {
        f.grid.lines().iter().position(|l| l.connects(a, b)).unwrap()
    }

    #[test]
    fn nominal_flow_sags_toward_the_feeder_end() {
        let f = Feeder::build(3).unwrap();
        let v = f.flow_view(1.0, 0, 0.0).unwrap();
        assert_eq!(v.newton_v.len(), 33);
        assert_eq!(v.newton_v[0], 1.0);
        assert!(v.vmin < 0.95);
        assert!(v.lindistflow_v.iter().zip(&v.newton_v).all(|(l, n)| l + 1e-9 >= *n));
        assert!(v.newton_loss_kw > 150.0 && v.newton_loss_kw < 250.0);
    }

    #[test]
    fn wind_and_light_load_cut_losses() {
        let f = Feeder::build(3).unwrap();
        let heavy = f.flow_view(1.0, 0, 0.0).unwrap().newton_loss_kw;
        assert!(f.flow_view(0.5, 0, 0.0).unwrap().newton_loss_kw < heavy);
        assert!(f.flow_view(1.0, 0, 500.0).unwrap().newton_loss_kw < heavy);
        let zero = f.flow_view(0.0, 0, 0.0).unwrap();
        assert!(zero.newton_loss_kw.abs() < 1e-9);
    }

    #[test]
    fn toggles_track_radiality() {
        let mut f = Feeder::build(3).unwrap();
        let tie = switch_index(&f, 12, 22);
        assert!(!f.config().is_closed(tie));
        let t: serde_json::Value = serde_json::from_str(&f.toggle(tie)).unwrap();
        assert_eq!(t["radiality"], "wrong_line_count");
        assert!(serde_json::from_str::<serde_json::Value>(&f.flow(1.0, 0, 0.0)).unwrap()["error"].is_string());
        let sect = switch_index(&f, 10, 11);
        let t: serde_json::Value = serde_json::from_str(&f.toggle(sect)).unwrap();
        assert_eq!(t["radiality"], "radial");
        assert!(f.flow_view(1.0, 0, 0.0).is_ok());
        f.reset();
        assert_eq!(f.config(), &f.grid.default_config());
    }

    #[test]
    fn fixed_lines_and_bad_input_are_rejected() {
        let mut f = Feeder::build(3).unwrap();
        let fixed = f.grid.lines().iter().position(|l| !l.switchable).unwrap();
        assert!(f.toggle(fixed).contains("error"));
        assert!(f.toggle(999).contains("error"));
        assert!(f.flow(-1.0, 0, 0.0).contains("error"));
        assert!(f.flow(1.0, 99, 0.0).contains("error"));
        assert!(f.forecast(0.0, 0).contains("error"));
    }

    #[test]
    fn forecast_rows_are_distributions() {
        let f = Feeder::build(3).unwrap();
        let v = f.forecast_view(600.0, 24).unwrap();
        assert_eq!(v.probs.len(), 25);
        assert_eq!(v.probs[0][v.observed_state], 1.0);
        for row in &v.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(v.expected_kw.iter().all(|e| *e >= 0.0 && *e <= 1000.0));
    }

    #[test]
    fn lines_json_lists_every_line() {
        let f = Feeder::build(3).unwrap();
        let v: Vec<serde_json::Value> = serde_json::from_str(&f.lines()).unwrap();
        assert_eq!(v.len(), 37);
        assert_eq!(v.iter().filter(|l| l["switchable"] == true).count(), 9);
    }
}
