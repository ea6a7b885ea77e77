use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vvo_cli::{
    cmd_estimate_wind, cmd_evaluate, cmd_generate, cmd_optimize, cmd_powerflow, parse_equipment, parse_hours,
    CliResult, EvaluateConfig, GenerateConfig, PowerflowConfig, RunConfig,
};
use vvo_core::eval::FlowEngine;

#[derive(Parser)]
#[command(name = "vvo", version, about = "Day-ahead volt/VAR optimization for radial feeders")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 33-node feeder and seeded synthetic load/wind data.
    Generate(GenerateArgs),
    /// Build and solve the day-ahead problem; writes schedule.json and report.json.
    Optimize(OptimizeArgs),
    /// Replay a schedule on realized data; writes metrics.json and hourly.csv.
    Evaluate(EvaluateArgs),
    /// Estimate a Markov wind model from an hourly series.
    EstimateWind(EstimateWindArgs),
    /// Newton and LinDistFlow power flow for one hour, with a comparison.
    Powerflow(PowerflowArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Days of history.
    #[arg(long, default_value_t = 30)]
    days: u32,
    /// Extra days of realized data for evaluation.
    #[arg(long, default_value_t = 0)]
    test_days: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// ULTC tap step (ratio change per tap).
    #[arg(long, default_value_t = 0.01)]
    tap_step: f64,
    /// Multiplier on the nominal node demands.
    #[arg(long)]
    load_scale: Option<f64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    loads: PathBuf,
    #[arg(long)]
    wind: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of scheduling steps.
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    /// Clock hours per step.
    #[arg(long, default_value_t = 1)]
    step_hours: usize,
    /// Most probable wind states kept per step (all when omitted).
    #[arg(long)]
    states: Option<usize>,
    /// Markov states estimated from the wind series.
    #[arg(long, default_value_t = 10)]
    wind_bins: usize,
    /// Days averaged into the typical load pattern.
    #[arg(long, default_value_t = 30)]
    window: u32,
    /// Switching budget; must be even.
    #[arg(long, default_value_t = 6)]
    budget: usize,
    #[arg(long, default_value_t = 1e-3)]
    gap: f64,
    #[arg(long, default_value_t = 1_000_000)]
    node_cap: usize,
    /// Seconds.
    #[arg(long)]
    time_cap: Option<f64>,
    /// Peak clock hours, e.g. "9-22" or "8-11,17-21".
    #[arg(long, default_value = "9-22")]
    peak_hours: String,
    /// "all", "none" or a list of cap, ultc, storage, reconf.
    #[arg(long, default_value = "all")]
    equipment: String,
    /// One tap position for the whole horizon.
    #[arg(long)]
    daily_tap: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Newton,
    Lindistflow,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    /// Realized loads; every day in the file is evaluated.
    #[arg(long)]
    loads: PathBuf,
    /// Realized hourly wind, aligned with the load days.
    #[arg(long)]
    wind: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "newton")]
    engine: Engine,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateWindArgs {
    #[arg(long)]
    wind: PathBuf,
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 1000.0)]
    rated_kw: f64,
    #[arg(long, default_value = "wind_model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PowerflowArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Injection set JSON (p.u.).
    #[arg(long, conflicts_with = "loads")]
    injections: Option<PathBuf>,
    /// Load history; one hour of one day is solved.
    #[arg(long)]
    loads: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    day: u32,
    #[arg(long, default_value_t = 19)]
    hour: usize,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    tap: i32,
    #[arg(long, default_value = "powerflow.json")]
    out: PathBuf,
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => {
            let mut cfg = GenerateConfig {
                out: a.out,
                days: a.days,
                test_days: a.test_days,
                seed: a.seed,
                tap_step: a.tap_step,
                ..Default::default()
            };
            if let Some(k) = a.load_scale {
                cfg.load_scale = k;
            }
            let files = cmd_generate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&files).expect("paths serialize"));
        }
        Command::Optimize(a) => {
            let mut cfg = RunConfig::new(a.grid, a.loads, a.out);
            cfg.wind = a.wind;
            cfg.horizon = a.horizon;
            cfg.step_hours = a.step_hours;
            cfg.states = a.states;
            cfg.wind_bins = a.wind_bins;
            cfg.window = a.window;
            cfg.budget = a.budget;
            cfg.gap = a.gap;
            cfg.node_cap = a.node_cap;
            cfg.time_cap = a.time_cap;
            cfg.peak_hours = parse_hours(&a.peak_hours)?;
            cfg.equipment = parse_equipment(&a.equipment)?;
            cfg.daily_tap = a.daily_tap;
            cfg.threads = a.threads;
            cfg.seed = a.seed;
            let o = cmd_optimize(&cfg)?;
            println!(
                "{:?}: expected loss {:.4} kW, gap {:?}, {} nodes, {:.1} s -> {}",
                o.report.solve.status,
                o.schedule.expected_loss_kw,
                o.report.solve.gap,
                o.report.solve.nodes,
                o.report.timestamp.wall_time_s,
                o.schedule_path.display()
            );
        }
        Command::Evaluate(a) => {
            let engine = match a.engine {
                Engine::Newton => FlowEngine::Newton,
                Engine::Lindistflow => FlowEngine::LinDistFlow,
            };
            let cfg = EvaluateConfig { grid: a.grid, schedule: a.schedule, loads: a.loads, wind: a.wind, engine, out: a.out };
            let m = cmd_evaluate(&cfg)?;
            println!(
                "{} days: mean loss {:.3} kW, mean vmin {:.4}, mean spread {:.4}, {} failed hours",
                m.days,
                m.mean_loss_kw,
                m.mean_vmin,
                m.mean_spread,
                m.failed_hours.len()
            );
        }
        Command::EstimateWind(a) => {
            let m = cmd_estimate_wind(&a.wind, a.states, a.rated_kw, &a.out)?;
            println!("{} states -> {}", m.states(), a.out.display());
        }
        Command::Powerflow(a) => {
            let cfg = PowerflowConfig {
                grid: a.grid,
                injections: a.injections,
                loads: a.loads,
                day: a.day,
                hour: a.hour,
                tap: a.tap,
                out: a.out,
            };
            let r = cmd_powerflow(&cfg)?;
            println!(
                "newton loss {:.4} kW, lindistflow {:.4} kW, mean |dv| {:.3e}, max |dv| {:.3e}",
                r.newton_loss_kw, r.lindistflow_loss_kw, r.comparison.mean_abs_dv, r.comparison.max_abs_dv
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Flag errors are input errors; clap's own code 2 means infeasible here.
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
