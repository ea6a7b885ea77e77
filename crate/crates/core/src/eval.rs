//! A posteriori evaluation of day-ahead schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::formulation::{VvoProblem, VvoSchedule};
use crate::grid::GridSpec;
use crate::loads::DayProfileSet;
use crate::powerflow::{lindistflow_solve, newton_ac_solve, FlowSolution, InjectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowEngine {
    Newton,
    LinDistFlow,
}

/// Realized conditions of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayActuals {
    pub loads: DayProfileSet,
    /// Wind output per clock hour, kW (empty when the grid has no wind).
    pub wind_kw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub day: usize,
    pub hour: usize,
    pub converged: bool,
    pub loss_kw: f64,
    pub vmin: f64,
    pub vmax: f64,
    pub spread: f64,
    pub substation_kw: f64,
    /// Quadratic (LinDistFlow) loss estimate for the same hour, kW.
    pub approx_loss_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub engine: FlowEngine,
    pub days: usize,
    pub hours_per_day: usize,
    pub mean_loss_kw: f64,
    /// Mean over days of the daily maximum substation import, MW.
    pub peak_load_mw: f64,
    pub mean_vmin: f64,
    pub mean_vmax: f64,
    pub mean_spread: f64,
    /// Mean relative error of the quadratic loss estimate against the
    /// engine loss, over hours with nonzero loss.
    pub approx_loss_rel_error: f64,
    /// `(day, hour)` pairs excluded because the power flow failed.
    pub failed_hours: Vec<(usize, usize)>,
    pub hours: Vec<HourRecord>,
}

impl MetricsReport {
    pub fn write_hourly_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for h in &self.hours {
            w.serialize(h).map_err(|e| VvoError::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| VvoError::io("<hourly csv>", e))
    }
}

/// Mean of `max - min` over a set of hourly voltage vectors.
pub fn voltage_spread(hourly: &[Vec<f64>]) -> Result<f64> {
    if hourly.is_empty() || hourly.iter().any(|v| v.is_empty()) {
        return Err(VvoError::InvalidInput("voltage spread needs nonempty hourly voltage sets".into()));
    }
    let total: f64 = hourly
        .iter()
        .map(|v| {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        })
        .sum();
    Ok(total / hourly.len() as f64)
}

/// Injections of one clock hour with the schedule applied.
pub fn scheduled_injections(
    spec: &GridSpec,
    schedule: &VvoSchedule,
    step: usize,
    p_demand: Vec<f64>,
    q_demand: Vec<f64>,
    wind_pu: f64,
) -> InjectionSet {
    let eq = spec.equipment();
    let mut inj = InjectionSet::from_demand(p_demand, q_demand);
    if let Some(site) = &eq.wind {
        inj.p_gen[site.node - 1] += wind_pu;
    }
    for (bank, row) in eq.capacitors.iter().zip(&schedule.capacitor_modules) {
        inj.q_gen[bank.node - 1] += spec.kw_to_pu(bank.module_kvar * row[step] as f64);
    }
    let sign = if schedule.peak_steps[step] { 1.0 } else { -1.0 };
    for (unit, row) in eq.storage.iter().zip(&schedule.storage_kw) {
        inj.storage[unit.node - 1] += sign * spec.kw_to_pu(row[step]);
    }
    inj
}

fn tap_ratio(spec: &GridSpec, schedule: &VvoSchedule, step: usize) -> f64 {
    spec.equipment().ultc.as_ref().map_or(1.0, |u| u.ratio(schedule.taps[step]))
}

fn solve(engine: FlowEngine, spec: &GridSpec, schedule: &VvoSchedule, inj: &InjectionSet, step: usize) -> Result<FlowSolution> {
    let cfg = schedule.config();
    let t = tap_ratio(spec, schedule, step);
    match engine {
        FlowEngine::Newton => newton_ac_solve(spec, &cfg, inj, t),
        FlowEngine::LinDistFlow => lindistflow_solve(spec, &cfg, inj, t),
    }
}

/// Replay a schedule hour by hour against realized loads and wind.
/// Storage follows the schedule open-loop.
pub fn evaluate(spec: &GridSpec, schedule: &VvoSchedule, actuals: &[DayActuals], engine: FlowEngine) -> Result<MetricsReport> {
    schedule.validate(spec, Some(1e-6))?;
    if actuals.is_empty() {
        return Err(VvoError::InvalidInput("no days to evaluate".into()));
    }
    let hours = schedule.horizon * schedule.step_hours;
    let has_wind = spec.equipment().wind.is_some();
    let n = spec.node_count();
    let mut records = Vec::with_capacity(actuals.len() * hours);
    let mut failed = Vec::new();
    for (d, day) in actuals.iter().enumerate() {
        if day.loads.nodes() != n || day.loads.p.iter().any(|r| r.len() < hours) {
            return Err(VvoError::InvalidInput(format!("day {} does not cover every node and hour", d + 1)));
        }
        if has_wind && day.wind_kw.len() < hours {
            return Err(VvoError::InvalidInput(format!("day {} lacks wind data", d + 1)));
        }
        for h in 1..=hours {
            let step = (h - 1) / schedule.step_hours;
            let p: Vec<f64> = day.loads.p.iter().map(|r| r[h - 1]).collect();
            let q: Vec<f64> = day.loads.q.iter().map(|r| r[h - 1]).collect();
            let wind = if has_wind { spec.kw_to_pu(day.wind_kw[h - 1]) } else { 0.0 };
            let inj = scheduled_injections(spec, schedule, step, p, q, wind);
            let approx = solve(FlowEngine::LinDistFlow, spec, schedule, &inj, step)?;
            let sol = match engine {
                FlowEngine::LinDistFlow => Ok(approx.clone()),
                FlowEngine::Newton => solve(FlowEngine::Newton, spec, schedule, &inj, step),
            };
            match sol {
                Ok(sol) => {
                    let v = sol.voltages();
                    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
                    records.push(HourRecord {
                        day: d + 1,
                        hour: h,
                        converged: true,
                        loss_kw: spec.pu_to_kw(sol.loss),
                        vmin,
                        vmax,
                        spread: vmax - vmin,
                        substation_kw: spec.pu_to_kw(sol.substation_p),
                        approx_loss_kw: spec.pu_to_kw(approx.loss),
                    });
                }
                Err(VvoError::NotConverged { .. }) => {
                    log::warn!("power flow did not converge on day {} hour {h}", d + 1);
                    failed.push((d + 1, h));
                    records.push(HourRecord {
                        day: d + 1,
                        hour: h,
                        converged: false,
                        loss_kw: f64::NAN,
                        vmin: f64::NAN,
                        vmax: f64::NAN,
                        spread: f64::NAN,
                        substation_kw: f64::NAN,
                        approx_loss_kw: spec.pu_to_kw(approx.loss),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let ok: Vec<&HourRecord> = records.iter().filter(|r| r.converged).collect();
    if ok.is_empty() {
        return Err(VvoError::InvalidInput("power flow failed on every hour".into()));
    }
    let mean = |f: &dyn Fn(&HourRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64;
    let mut peaks = Vec::new();
    for d in 1..=actuals.len() {
        let day_peak = ok.iter().filter(|r| r.day == d).map(|r| r.substation_kw).fold(f64::NEG_INFINITY, f64::max);
        if day_peak.is_finite() {
            peaks.push(day_peak / 1000.0);
        }
    }
    let rel: Vec<f64> = ok
        .iter()
        .filter(|r| r.loss_kw.abs() > 1e-12)
        .map(|r| (r.approx_loss_kw - r.loss_kw).abs() / r.loss_kw.abs())
        .collect();
    Ok(MetricsReport {
        engine,
        days: actuals.len(),
        hours_per_day: hours,
        mean_loss_kw: mean(&|r| r.loss_kw),
        peak_load_mw: peaks.iter().sum::<f64>() / peaks.len() as f64,
        mean_vmin: mean(&|r| r.vmin),
        mean_vmax: mean(&|r| r.vmax),
        mean_spread: mean(&|r| r.spread),
        approx_loss_rel_error: if rel.is_empty() { 0.0 } else { rel.iter().sum::<f64>() / rel.len() as f64 },
        failed_hours: failed,
        hours: records,
    })
}

/// Expected loss (p.u.) of a schedule under the optimizer's own scenario
/// set, recomputed with LinDistFlow per (step, wind state).
pub fn replay_expected_loss(problem: &VvoProblem, schedule: &VvoSchedule) -> Result<f64> {
    let meta = &problem.meta;
    let spec = &meta.grid;
    if schedule.horizon != meta.options.horizon {
        return Err(VvoError::DimensionMismatch { expected: meta.options.horizon, got: schedule.horizon });
    }
    let mut total = 0.0;
    for (s, sc) in meta.scenarios.iter().enumerate() {
        let inj = scheduled_injections(
            spec,
            schedule,
            sc.step,
            meta.step_p[sc.step].clone(),
            meta.step_q[sc.step].clone(),
            sc.wind_pu,
        );
        let sol = solve(FlowEngine::LinDistFlow, spec, schedule, &inj, sc.step)?;
        total += problem.scenario_weight(s) * sol.loss;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::baran_wu_33_bare;
    use crate::formulation::FormulationOptions;

    #[test]
    fn spread_examples() {
        assert_eq!(voltage_spread(&[vec![1.0; 5]]).unwrap(), 0.0);
        assert!((voltage_spread(&[vec![0.95, 1.0]]).unwrap() - 0.05).abs() < 1e-15);
        let two = [vec![1.0, 0.98], vec![1.0, 0.96]];
        assert!((voltage_spread(&two).unwrap() - 0.03).abs() < 1e-15);
        assert!(voltage_spread(&[]).is_err());
        assert!(voltage_spread(&[vec![]]).is_err());
    }

    #[test]
    fn zero_load_day_is_flat() {
        let g = baran_wu_33_bare();
        let opts = FormulationOptions::default();
        let sched = VvoSchedule::no_action(&g, &g.default_config(), &opts);
        let day = DayActuals { loads: DayProfileSet::zeros(33), wind_kw: vec![] };
        let r = evaluate(&g, &sched, &[day], FlowEngine::Newton).unwrap();
        assert_eq!(r.mean_loss_kw, 0.0);
        assert_eq!(r.mean_spread, 0.0);
        assert_eq!((r.mean_vmin, r.mean_vmax), (1.0, 1.0));
        assert!(r.failed_hours.is_empty());
    }
}
