//! Commands behind the `vvo` binary. Each command reads plain JSON/CSV
//! inputs and writes plain JSON/CSV outputs into an output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use vvo_core::cases::{baran_wu_33, baran_wu_33_loads};
use vvo_core::eval::{evaluate, DayActuals, FlowEngine, MetricsReport};
use vvo_core::formulation::{build_problem, extract_schedule, EquipmentSet, FormulationOptions, VvoSchedule, WindInput};
use vvo_core::grid::{load_grid_spec, GridSpec};
use vvo_core::loads::{default_peak_hours, ingest_csv, typical_pattern, DEFAULT_WINDOW_DAYS, HOURS};
use vvo_core::powerflow::{compare_solutions, lindistflow_solve, newton_ac_solve, FlowComparison, FlowSolution, InjectionSet};
use vvo_core::solver::{solve_problem, BnbOptions, SolveStatus};
use vvo_core::synthetic::{synthetic_loads, synthetic_wind, LoadParams, WindParams};
use vvo_core::wind::{read_wind_csv, write_wind_series, WindMarkovModel};
use vvo_core::VvoError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files.
    Input(String),
    Infeasible(String),
    /// Node or time cap reached before any feasible schedule was found.
    NoIncumbent(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible(_) => 2,
            CliError::NoIncumbent(_) => 3,
            CliError::Input(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::NoIncumbent(m) => write!(f, "no schedule found: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<VvoError> for CliError {
    fn from(e: VvoError) -> Self {
        match e {
            VvoError::InfeasibleByConstruction(_) => CliError::Infeasible(e.to_string()),
            VvoError::NotConverged { .. } | VvoError::Io { .. } => CliError::Other(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn context(what: &str) -> impl Fn(VvoError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
        CliError::Infeasible(m) => CliError::Infeasible(format!("{what}: {m}")),
        CliError::NoIncumbent(m) => CliError::NoIncumbent(format!("{what}: {m}")),
        CliError::Other(m) => CliError::Other(format!("{what}: {m}")),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("file not found: {}", path.display())))
    }
}

fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Parse `9-22`, `1,2,18-21` style hour lists.
pub fn parse_hours(text: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::Input(format!("bad hour range '{part}'"));
        let (a, b): (usize, usize) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let h = part.parse().map_err(|_| bad())?;
                (h, h)
            }
        };
        if a > b || a == 0 || b > HOURS {
            return Err(bad());
        }
        out.extend(a..=b);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Parse `all`, `none` or a comma list of `cap`, `ultc`, `storage`, `reconf`.
pub fn parse_equipment(text: &str) -> CliResult<EquipmentSet> {
    match text.trim() {
        "all" => return Ok(EquipmentSet::all()),
        "none" => return Ok(EquipmentSet::none()),
        _ => {}
    }
    let mut set = EquipmentSet::none();
    for item in text.split(',').map(str::trim) {
        match item {
            "cap" | "capacitors" => set.capacitors = true,
            "ultc" => set.ultc = true,
            "storage" => set.storage = true,
            "reconf" | "reconfiguration" => set.reconfiguration = true,
            _ => return Err(CliError::Input(format!("unknown equipment '{item}'"))),
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub out: PathBuf,
    /// Days of load/wind history.
    pub days: u32,
    /// Days of realized data for evaluation, following the history.
    pub test_days: u32,
    pub seed: u64,
    /// ULTC tap step written into the grid file.
    pub tap_step: f64,
    pub load_scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            out: PathBuf::from("data"),
            days: DEFAULT_WINDOW_DAYS,
            test_days: 0,
            seed: 1,
            tap_step: 0.01,
            load_scale: LoadParams::DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedFiles {
    pub grid: PathBuf,
    pub loads: PathBuf,
    pub wind: PathBuf,
    pub actual_loads: Option<PathBuf>,
    pub actual_wind: Option<PathBuf>,
}

/// Write the 33-node feeder plus seeded synthetic load and wind data.
pub fn cmd_generate(cfg: &GenerateConfig) -> CliResult<GeneratedFiles> {
    if cfg.days == 0 {
        return Err(CliError::Input("need at least one day of history".into()));
    }
    create_dir(&cfg.out)?;
    let mut grid = baran_wu_33();
    let mut eq = grid.equipment().clone();
    if let Some(u) = eq.ultc.as_mut() {
        u.tap_step = cfg.tap_step;
    }
    grid = grid.with_equipment(eq).map_err(context("grid"))?;
    let rated = grid.equipment().wind.as_ref().map_or(1000.0, |w| w.rated_kw);

    let mut params = LoadParams::new(baran_wu_33_loads().iter().map(|l| l.0).collect());
    params.scale = cfg.load_scale;
    let total = cfg.days + cfg.test_days;
    let history = synthetic_loads(&params, total, cfg.seed)?;
    let wind = synthetic_wind(&WindParams::new(rated), total as usize * HOURS, cfg.seed.wrapping_add(1))?;

    let split = |first: u32, last: u32| {
        let mut h = vvo_core::loads::LoadHistory::new();
        for (node, day, hour, kw) in history.iter() {
            if (first..=last).contains(&day) {
                h.insert(node, day - first + 1, hour, kw).expect("unique records");
            }
        }
        h
    };
    let write_loads = |path: &Path, h: &vvo_core::loads::LoadHistory| -> CliResult<()> {
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_file(path, &buf)
    };
    let write_wind = |path: &Path, s: &[f64]| -> CliResult<()> {
        let mut buf = Vec::new();
        write_wind_series(&mut buf, s)?;
        write_file(path, &buf)
    };

    let files = GeneratedFiles {
        grid: cfg.out.join("grid.json"),
        loads: cfg.out.join("loads.csv"),
        wind: cfg.out.join("wind.csv"),
        actual_loads: (cfg.test_days > 0).then(|| cfg.out.join("actual_loads.csv")),
        actual_wind: (cfg.test_days > 0).then(|| cfg.out.join("actual_wind.csv")),
    };
    grid.save(&files.grid)?;
    let hist_hours = cfg.days as usize * HOURS;
    write_loads(&files.loads, &split(1, cfg.days))?;
    write_wind(&files.wind, &wind[..hist_hours])?;
    if let (Some(l), Some(w)) = (&files.actual_loads, &files.actual_wind) {
        write_loads(l, &split(cfg.days + 1, total))?;
        write_wind(w, &wind[hist_hours..])?;
    }
    Ok(files)
}

// ---------------------------------------------------------------- optimize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: PathBuf,
    pub loads: PathBuf,
    /// Required when the grid has a wind site.
    pub wind: Option<PathBuf>,
    pub out: PathBuf,
    pub horizon: usize,
    pub step_hours: usize,
    /// Most probable wind states kept per step.
    pub states: Option<usize>,
    /// Number of Markov states estimated from the wind series.
    pub wind_bins: usize,
    /// Trailing days averaged into the typical load pattern.
    pub window: u32,
    pub budget: usize,
    pub peak_hours: Vec<usize>,
    pub equipment: EquipmentSet,
    pub daily_tap: bool,
    pub gap: f64,
    pub node_cap: usize,
    pub time_cap: Option<f64>,
    pub threads: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(grid: impl Into<PathBuf>, loads: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        let f = FormulationOptions::default();
        let b = BnbOptions::default();
        RunConfig {
            grid: grid.into(),
            loads: loads.into(),
            wind: None,
            out: out.into(),
            horizon: f.horizon,
            step_hours: f.step_hours,
            states: f.wind_states,
            wind_bins: 10,
            window: DEFAULT_WINDOW_DAYS,
            budget: f.switching_budget,
            peak_hours: default_peak_hours(),
            equipment: f.equipment,
            daily_tap: f.daily_tap,
            gap: b.gap_tol,
            node_cap: b.node_cap,
            time_cap: b.time_cap,
            threads: b.threads,
            seed: 1,
        }
    }

    pub fn formulation(&self) -> FormulationOptions {
        FormulationOptions {
            horizon: self.horizon,
            step_hours: self.step_hours,
            wind_states: self.states,
            switching_budget: self.budget,
            peak_hours: self.peak_hours.clone(),
            equipment: self.equipment,
            daily_tap: self.daily_tap,
            ..Default::default()
        }
    }

    pub fn bnb(&self) -> BnbOptions {
        BnbOptions {
            gap_tol: self.gap,
            node_cap: self.node_cap,
            time_cap: self.time_cap,
            threads: self.threads.max(1),
            ..Default::default()
        }
    }

    /// Flag-level checks done before any file is read.
    pub fn validate(&self) -> CliResult<()> {
        self.formulation().validate()?;
        if !(self.gap >= 0.0 && self.gap.is_finite()) {
            return Err(CliError::Input("gap must be a nonnegative number".into()));
        }
        if self.node_cap == 0 {
            return Err(CliError::Input("node cap must be positive".into()));
        }
        if self.time_cap.is_some_and(|t| !(t > 0.0)) {
            return Err(CliError::Input("time cap must be positive".into()));
        }
        if self.window == 0 {
            return Err(CliError::Input("window must be at least one day".into()));
        }
        require_file(&self.grid)?;
        require_file(&self.loads)?;
        if let Some(w) = &self.wind {
            require_file(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub variables: usize,
    pub rows: usize,
    pub integers: usize,
    pub scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    /// Expected loss of the incumbent, kW.
    pub expected_loss_kw: Option<f64>,
    /// Best proven lower bound, kW.
    pub bound_kw: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub numerical_failures: usize,
}

/// Run-dependent fields; everything else in the report is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamp {
    pub finished_unix_s: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub config: RunConfig,
    pub problem: ProblemSize,
    pub observed_wind_state: Option<usize>,
    pub solve: SolveSummary,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub schedule: VvoSchedule,
    pub report: OptimizeReport,
    pub schedule_path: PathBuf,
    pub report_path: PathBuf,
}

/// Inputs of an optimization run after parsing.
pub struct PreparedRun {
    pub grid: GridSpec,
    pub wind_model: Option<WindMarkovModel>,
    pub observed_state: Option<usize>,
    pub problem: vvo_core::formulation::VvoProblem,
}

/// Read the inputs of `cfg` and assemble the optimization problem.
pub fn prepare(cfg: &RunConfig) -> CliResult<PreparedRun> {
    cfg.validate()?;
    let grid = load_grid_spec(&cfg.grid).map_err(context("grid"))?;
    let history = ingest_csv(&cfg.loads).map_err(context("loads"))?;
    let profiles = typical_pattern(&history, cfg.window, &grid).map_err(context("loads"))?;
    let (wind_model, observed_state) = match (&grid.equipment().wind, &cfg.wind) {
        (Some(site), Some(path)) => {
            let series = read_wind_csv(path).map_err(context("wind"))?;
            let model = WindMarkovModel::estimate(&series, cfg.wind_bins, site.rated_kw).map_err(context("wind"))?;
            let obs = model.state_of(*series.last().expect("estimate rejects empty series"));
            (Some(model), Some(obs))
        }
        (Some(_), None) => return Err(CliError::Input("the grid has a wind site; pass --wind".into())),
        (None, Some(_)) => {
            log::warn!("grid has no wind site; ignoring the wind series");
            (None, None)
        }
        (None, None) => (None, None),
    };
    let wind = wind_model.as_ref().zip(observed_state).map(|(model, observed_state)| WindInput { model, observed_state });
    let problem = build_problem(&grid, &grid.default_config(), &profiles, wind, &cfg.formulation())?;
    Ok(PreparedRun { grid, wind_model, observed_state, problem })
}

/// Build, solve and write `schedule.json` and `report.json`.
pub fn cmd_optimize(cfg: &RunConfig) -> CliResult<OptimizeOutcome> {
    let start = Instant::now();
    let run = prepare(cfg)?;
    let p = &run.problem;
    log::info!("problem: {} variables, {} rows, {} integers", p.n_vars(), p.rows.len(), p.integer_columns().len());
    let rep = solve_problem(p, &cfg.bnb());
    let g = &run.grid;
    let summary = SolveSummary {
        status: rep.status,
        expected_loss_kw: rep.objective.map(|v| g.pu_to_kw(v)),
        bound_kw: rep.bound.map(|v| g.pu_to_kw(v)),
        gap: rep.gap,
        nodes: rep.nodes,
        numerical_failures: rep.numerical_failures,
    };
    let report = OptimizeReport {
        config: cfg.clone(),
        problem: ProblemSize {
            variables: p.n_vars(),
            rows: p.rows.len(),
            integers: p.integer_columns().len(),
            scenarios: p.meta.scenarios.len(),
        },
        observed_wind_state: run.observed_state,
        solve: summary,
        timestamp: Timestamp { finished_unix_s: unix_time(), wall_time_s: start.elapsed().as_secs_f64() },
    };
    create_dir(&cfg.out)?;
    let report_path = cfg.out.join("report.json");
    write_json(&report_path, &report)?;
    let Some(x) = rep.incumbent.as_ref() else {
        return Err(match rep.status {
            SolveStatus::Infeasible => CliError::Infeasible("no feasible schedule exists".into()),
            _ => CliError::NoIncumbent(format!("{:?} after {} nodes", rep.status, rep.nodes)),
        });
    };
    if rep.status != SolveStatus::Optimal {
        log::warn!("search stopped early ({:?}); gap {:?}", rep.status, rep.gap);
    }
    let mut schedule = extract_schedule(p, x)?;
    schedule.gap = rep.gap;
    let schedule_path = cfg.out.join("schedule.json");
    write_json(&schedule_path, &schedule)?;
    Ok(OptimizeOutcome { schedule, report, schedule_path, report_path })
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub grid: PathBuf,
    pub schedule: PathBuf,
    /// Realized loads; every day in the file is evaluated.
    pub loads: PathBuf,
    /// Realized wind, hour-aligned with the load days.
    pub wind: Option<PathBuf>,
    pub engine: FlowEngine,
    pub out: PathBuf,
}

pub fn read_schedule(path: &Path) -> CliResult<VvoSchedule> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("schedule {}: {e}", path.display())))
}

/// Realized days from a load history and an optional hourly wind series.
pub fn load_actuals(grid: &GridSpec, loads: &Path, wind: Option<&Path>) -> CliResult<Vec<DayActuals>> {
    let history = ingest_csv(loads).map_err(context("loads"))?;
    let series = wind.map(read_wind_csv).transpose().map_err(context("wind"))?;
    let mut out = Vec::new();
    for day in history.days() {
        let wind_kw = match &series {
            Some(s) if grid.equipment().wind.is_some() => {
                let a = (day as usize - 1) * HOURS;
                s.get(a..a + HOURS)
                    .ok_or_else(|| CliError::Input(format!("wind series does not cover day {day}")))?
                    .to_vec()
            }
            _ => Vec::new(),
        };
        out.push(DayActuals { loads: history.day_profile(grid, day).map_err(context("loads"))?, wind_kw });
    }
    Ok(out)
}

/// Replay a schedule on realized data; writes `metrics.json` and `hourly.csv`.
pub fn cmd_evaluate(cfg: &EvaluateConfig) -> CliResult<MetricsReport> {
    require_file(&cfg.grid)?;
    require_file(&cfg.loads)?;
    if let Some(w) = &cfg.wind {
        require_file(w)?;
    }
    let grid = load_grid_spec(&cfg.grid).map_err(context("grid"))?;
    let schedule = read_schedule(&cfg.schedule)?;
    let actuals = load_actuals(&grid, &cfg.loads, cfg.wind.as_deref())?;
    let report = evaluate(&grid, &schedule, &actuals, cfg.engine)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("metrics.json"), &report)?;
    let mut buf = Vec::new();
    report.write_hourly_csv(&mut buf)?;
    write_file(&cfg.out.join("hourly.csv"), &buf)?;
    Ok(report)
}

// ---------------------------------------------------------------- estimate-wind

pub fn cmd_estimate_wind(wind: &Path, states: usize, rated_kw: f64, out: &Path) -> CliResult<WindMarkovModel> {
    require_file(wind)?;
    let series = read_wind_csv(wind).map_err(context("wind"))?;
    let model = WindMarkovModel::estimate(&series, states, rated_kw).map_err(context("wind"))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut text = model.to_json();
    text.push('\n');
    write_file(out, text.as_bytes())?;
    Ok(model)
}

// ---------------------------------------------------------------- powerflow

#[derive(Debug, Clone)]
pub struct PowerflowConfig {
    pub grid: PathBuf,
    /// `InjectionSet` JSON; takes precedence over `loads`.
    pub injections: Option<PathBuf>,
    pub loads: Option<PathBuf>,
    pub day: u32,
    pub hour: usize,
    pub tap: i32,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerflowReport {
    pub tap_ratio: f64,
    pub newton: FlowSolution,
    pub lindistflow: FlowSolution,
    /// LinDistFlow against Newton.
    pub comparison: FlowComparison,
    pub newton_loss_kw: f64,
    pub lindistflow_loss_kw: f64,
}

pub fn cmd_powerflow(cfg: &PowerflowConfig) -> CliResult<PowerflowReport> {
    require_file(&cfg.grid)?;
    let grid = load_grid_spec(&cfg.grid).map_err(context("grid"))?;
    let inj: InjectionSet = match (&cfg.injections, &cfg.loads) {
        (Some(path), _) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("injections: {e}")))?
        }
        (None, Some(path)) => {
            require_file(path)?;
            if !(1..=HOURS).contains(&cfg.hour) {
                return Err(CliError::Input("hour must lie in 1..=24".into()));
            }
            let history = ingest_csv(path).map_err(context("loads"))?;
            let day = history.day_profile(&grid, cfg.day).map_err(context("loads"))?;
            let col = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[cfg.hour - 1]).collect();
            InjectionSet::from_demand(col(&day.p), col(&day.q))
        }
        (None, None) => return Err(CliError::Input("pass --injections or --loads".into())),
    };
    let ratio = match grid.equipment().ultc.as_ref() {
        Some(u) if cfg.tap.abs() <= u.max_tap() => u.ratio(cfg.tap),
        Some(u) => return Err(CliError::Input(format!("tap {} outside +-{}", cfg.tap, u.max_tap()))),
        None if cfg.tap == 0 => 1.0,
        None => return Err(CliError::Input("grid has no tap changer".into())),
    };
    let config = grid.default_config();
    let newton = newton_ac_solve(&grid, &config, &inj, ratio)?;
    let lindistflow = lindistflow_solve(&grid, &config, &inj, ratio)?;
    let comparison = compare_solutions(&lindistflow, &newton)?;
    let report = PowerflowReport {
        tap_ratio: ratio,
        newton_loss_kw: grid.pu_to_kw(newton.loss),
        lindistflow_loss_kw: grid.pu_to_kw(lindistflow.loss),
        newton,
        lindistflow,
        comparison,
    };
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&cfg.out, &report)?;
    Ok(report)
}
