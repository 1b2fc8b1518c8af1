//! Command-line front end: calibrate internal sample sizes, run experiments
//! from a config file, or sweep a scenario over tree sizes.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hds_core::calibrate::{CalibrationConfig, CalibrationTable, ParamKnowledge};
use hds_core::experiment::{ensure_calibration, run_monte_carlo, ExperimentConfig};
use hds_core::policy::JsonLinesSink;
use hds_core::report::{emit_report, ReportFormat};
use hds_core::scenario::Scenario;
use hds_core::TraceSink;

#[derive(Parser)]
#[command(
    name = "hds",
    about = "Sequential anomaly search over trees of stochastic processes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate fixed internal-test sample sizes for a scenario.
    Calibrate(CalibrateArgs),
    /// Run an experiment described by a TOML config file.
    Run(RunArgs),
    /// Sweep a catalog scenario over tree sizes and policies.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Catalog scenario: heavy-hitter, bernoulli, gauss.
    #[arg(long)]
    scenario: String,
    /// Required drift above one half.
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    /// Monte-Carlo runs per candidate sample size.
    #[arg(long, default_value_t = 100_000)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output calibration table (TOML).
    #[arg(long)]
    out: PathBuf,
    /// Child levels to calibrate (covers trees up to 2^levels processes).
    #[arg(long, default_value_t = 6)]
    levels: u32,
    /// Anomaly count the drift events must cover.
    #[arg(long, default_value_t = 1)]
    anomalies: usize,
    /// Largest per-child sample size to consider.
    #[arg(long, default_value_t = 64)]
    max_samples: u32,
    /// Calibrate for the known-parameter baseline instead.
    #[arg(long)]
    known: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads (overrides the config; 0 = default pool).
    #[arg(long)]
    workers: Option<usize>,
    /// Write per-test trace events as JSON lines (runs trials sequentially).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Reuse a calibration table instead of calibrating on the fly.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Catalog scenario: heavy-hitter, bernoulli, gauss.
    #[arg(long)]
    scenario: String,
    /// Comma-separated policy names (e.g. hds,irw,hds-active-seqgllr).
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
    /// Comma-separated process counts (powers of two).
    #[arg(long = "M", value_delimiter = ',')]
    tree_sizes: Vec<u64>,
    /// Anomalies per trial.
    #[arg(long = "K", default_value_t = 1)]
    anomalies: u64,
    /// Sampling cost.
    #[arg(long = "c", default_value_t = 0.01)]
    cost: f64,
    #[arg(long)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Warm-up draws for the adaptive leaf statistic.
    #[arg(long, default_value_t = 0)]
    init_samples: u32,
    /// Confidence level for active internal tests.
    #[arg(long)]
    confidence: Option<f64>,
    /// Reuse a calibration table instead of calibrating on the fly.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Calibrate(args) => calibrate(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let scenario = Scenario::by_name(&args.scenario)?;
    let knowledge = if args.known {
        ParamKnowledge::Known
    } else {
        ParamKnowledge::Composite
    };
    let cfg = CalibrationConfig {
        margin: args.margin,
        max_samples: args.max_samples,
        runs: args.runs,
        seed: args.seed,
    };
    let mut table = CalibrationTable::new();
    let sizes = hds_core::calibrate_into_table(
        &scenario,
        knowledge,
        args.levels,
        args.anomalies,
        &cfg,
        &mut table,
    )?;
    fs::write(&args.out, table.to_toml())
        .with_context(|| format!("writing {}", args.out.display()))?;
    for (level, k) in sizes.iter().enumerate() {
        println!("level {level}: {k} samples per child");
    }
    println!("calibration written to {}", args.out.display());
    Ok(())
}

fn load_table(path: Option<&PathBuf>) -> Result<CalibrationTable> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(CalibrationTable::from_toml(&text)?)
        }
        None => Ok(CalibrationTable::new()),
    }
}

fn execute(
    config: &ExperimentConfig,
    out: &std::path::Path,
    format: &str,
    trace: Option<&PathBuf>,
    calibration: Option<&PathBuf>,
) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    let mut table = load_table(calibration)?;
    ensure_calibration(config, &mut table)?;

    let report = match trace {
        Some(path) => {
            let file =
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut sink = JsonLinesSink::new(std::io::BufWriter::new(file));
            let report = run_monte_carlo(config, &table, Some(&mut sink as &mut dyn TraceSink))?;
            eprintln!(
                "trace written to {} (trials ran sequentially)",
                path.display()
            );
            report
        }
        None => run_monte_carlo(config, &table, None)?,
    };
    emit_report(&report, format, out)?;
    println!("{} rows written to {}", report.rows.len(), out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    execute(
        &config,
        &args.out,
        &args.format,
        args.trace.as_ref(),
        args.calibration.as_ref(),
    )
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.policies.is_empty() {
        bail!("no policies requested");
    }
    if args.tree_sizes.is_empty() {
        bail!("no tree sizes requested");
    }
    let scenario = Scenario::by_name(&args.scenario)?;
    let mut config = ExperimentConfig {
        scenario,
        scenario_name: args.scenario.clone(),
        tree_sizes: args.tree_sizes.clone(),
        anomalies: args.anomalies,
        cost: args.cost,
        policies: args.policies.clone(),
        init_samples: args.init_samples,
        confidence: 0.5 + 1e-16,
        runs: args.runs,
        seed: args.seed,
        workers: args.workers,
        sample_cap: hds_core::DEFAULT_SAMPLE_CAP,
        calibration_margin: 0.05,
        calibration_runs: 100_000,
        max_internal_samples: 64,
    };
    if let Some(p) = args.confidence {
        config.confidence = p;
    }
    execute(
        &config,
        &args.out,
        &args.format,
        None,
        args.calibration.as_ref(),
    )
}
