//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime fault,
//! 4 infeasible oracle verdict.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::capacity::{self, CapacityError, CapacityInstance, Objective, Verdict};
use crate::coding::CodingScheme;
use crate::engine::{run_simulation, sweep_boundary, EngineError, RunMetrics};
use crate::model::{doc::ConfigDoc, load_config, ConfigError, Scenario};
use crate::rng::replicate_seed;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("rate {0} lies outside the capacity region")]
    Infeasible(f64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 4,
            _ => 3,
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "wcnet", version, about = "Wireless computing network simulator and capacity oracle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write metrics.json and trace.csv.
    Run(RunArgs),
    /// Sweep the arrival rate or V and write sweep.csv.
    Sweep(SweepArgs),
    /// Solve the capacity LP and write capacity.json.
    Capacity(CapacityArgs),
    /// Write the average processing input rate per node and function.
    Distribution(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Horizon in slots.
    #[arg(long)]
    pub slots: Option<u64>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Dotted-path override such as `control.v=100`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn load(&self) -> Result<Scenario, CliError> {
        let mut o = Vec::new();
        if let Some(s) = self.seed {
            o.push(format!("control.seed={s}"));
        }
        if let Some(t) = self.slots {
            o.push(format!("control.horizon={t}"));
        }
        if let Some(w) = self.warmup_frac {
            o.push(format!("control.warmup_frac={w}"));
        }
        o.extend(self.overrides.iter().cloned());
        Ok(load_config(&self.config, &o)?)
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out_dir).map_err(io(format!("creating {}", self.out_dir.display())))?;
        Ok(&self.out_dir)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Lambda,
    V,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "lambda")]
    pub axis: Axis,
    /// Comma-separated, strictly increasing grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "broadcast,outage")]
    pub schemes: Vec<CodingScheme>,
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    MaxThroughput,
    MinCost,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "max-throughput")]
    pub mode: Mode,
    /// Per-client rate for `min-cost`; defaults to the config's rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Also write the LP in CPLEX LP format here.
    #[arg(long)]
    pub export_lp: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    metrics: &'a RunMetrics,
    config: ConfigDoc,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io(format!("writing {}", path.display())))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunMetrics, CliError> {
    let sc = args.common.load()?;
    let out = run_simulation(&sc)?;
    let dir = args.common.out_dir()?;
    write_json(
        &dir.join("metrics.json"),
        &MetricsDocument {
            metrics: &out.metrics,
            config: sc.to_document(),
        },
    )?;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    if out.trace.is_empty() {
        w.write_record(["t", "cost", "occupancy", "delivered"])?;
    }
    for row in &out.trace {
        w.serialize(row)?;
    }
    w.flush().map_err(io("writing trace.csv"))?;
    Ok(out.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scheme: String,
    pub axis_value: f64,
    pub replicate: u64,
    pub avg_cost: f64,
    pub avg_occupancy: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ChecksumRow {
    scheme: String,
    axis_value: f64,
    replicate: u64,
    channel_checksum: String,
}

/// Validates a sweep grid: nonempty and strictly increasing.
pub fn check_grid(grid: &[f64]) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::Usage("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Runs every (scheme, grid value, replicate) point of a sweep. Rows come
/// back in grid order regardless of completion order.
pub fn sweep(
    base: &Scenario,
    axis: Axis,
    grid: &[f64],
    schemes: &[CodingScheme],
    replicates: u64,
) -> Result<Vec<(SweepRow, RunMetrics)>, CliError> {
    check_grid(grid)?;
    if replicates == 0 {
        return Err(CliError::Usage("replicates must be at least 1".into()));
    }
    if schemes.is_empty() {
        return Err(CliError::Usage("no coding schemes".into()));
    }
    let mut points = Vec::new();
    for &scheme in schemes {
        for &x in grid {
            for r in 0..replicates {
                points.push((scheme, x, r));
            }
        }
    }
    points
        .par_iter()
        .map(|&(scheme, x, r)| {
            let mut sc = base.clone();
            sc.control.coding = scheme;
            sc.control.seed = replicate_seed(base.control.seed, r);
            sc.control.trace_stride = 0;
            match axis {
                Axis::Lambda => sc.control.arrival_rate = x,
                Axis::V => sc.control.v = x,
            }
            let m = run_simulation(&sc)?.metrics;
            Ok((
                SweepRow {
                    scheme: scheme.name().to_string(),
                    axis_value: x,
                    replicate: r,
                    avg_cost: m.avg_cost,
                    avg_occupancy: m.avg_occupancy,
                    stable: m.stability.stable,
                },
                m,
            ))
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    let sc = args.common.load()?;
    let results = sweep(&sc, args.axis, &args.grid, &args.schemes, args.replicates)?;
    let dir = args.common.out_dir()?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut ck = csv::Writer::from_path(dir.join("checksums.csv"))?;
    for (row, m) in &results {
        w.serialize(row)?;
        ck.serialize(ChecksumRow {
            scheme: row.scheme.clone(),
            axis_value: row.axis_value,
            replicate: row.replicate,
            channel_checksum: m.channel_checksum.clone(),
        })?;
    }
    w.flush().map_err(io("writing sweep.csv"))?;
    ck.flush().map_err(io("writing checksums.csv"))?;
    if args.axis == Axis::Lambda {
        for &scheme in &args.schemes {
            for r in 0..args.replicates {
                let stable: Vec<bool> = results
                    .iter()
                    .filter(|(row, _)| row.scheme == scheme.name() && row.replicate == r)
                    .map(|(row, _)| row.stable)
                    .collect();
                match sweep_boundary(&args.grid, &stable) {
                    Some(b) => println!("{} replicate {r}: boundary {b}", scheme.name()),
                    None => println!("{} replicate {r}: stable over the whole grid", scheme.name()),
                }
            }
        }
    }
    Ok(results.into_iter().map(|(r, _)| r).collect())
}

pub fn cmd_capacity(args: &CapacityArgs) -> Result<capacity::CapacityResult, CliError> {
    let sc = args.common.load()?;
    let inst = CapacityInstance::from_scenario(&sc)?;
    let objective = match args.mode {
        Mode::MaxThroughput => Objective::MaxThroughput,
        Mode::MinCost => Objective::MinCost {
            rate: args.rate.unwrap_or(sc.control.arrival_rate),
        },
    };
    let model = capacity::build_lp(&inst, objective);
    if let Some(path) = &args.export_lp {
        fs::write(path, model.lp.to_lp_format()).map_err(io(format!("writing {}", path.display())))?;
    }
    let result = capacity::solve(&model)?;
    write_json(&args.common.out_dir()?.join("capacity.json"), &result)?;
    if let (Verdict::Infeasible, Objective::MinCost { rate }) = (result.verdict, objective) {
        println!("infeasible");
        return Err(CliError::Infeasible(rate));
    }
    println!("{}", result.value.unwrap_or(0.0));
    Ok(result)
}

pub fn cmd_distribution(args: &RunArgs) -> Result<RunMetrics, CliError> {
    let sc = args.common.load()?;
    let m = run_simulation(&sc)?.metrics;
    let mut w = csv::Writer::from_path(args.common.out_dir()?.join("distribution.csv"))?;
    w.write_record(["node", "service", "function", "avg_rate"])?;
    for r in &m.processing {
        w.serialize((r.node, r.service, r.function, r.avg_rate))?;
    }
    w.flush().map_err(io("writing distribution.csv"))?;
    Ok(m)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|m| {
            println!(
                "avg_cost {} avg_occupancy {} stable {}",
                m.avg_cost, m.avg_occupancy, m.stability.stable
            )
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
        Command::Capacity(a) => cmd_capacity(a).map(|_| ()),
        Command::Distribution(a) => cmd_distribution(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
