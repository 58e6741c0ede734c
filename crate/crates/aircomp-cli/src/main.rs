//! Experiment CLI for OTFS-based over-the-air computation.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 consistency-gate
//! failure under `--check`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_aircomp::{
    reports_consistent, reports_to_csv, run_sweep, sweep_paths, ExperimentConfig, MseReport,
    SicPlan, ZpLayout,
};

#[derive(Parser)]
#[command(
    name = "otfs-aircomp",
    version,
    about = "OTFS over-the-air computation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Master seed; identical seeds reproduce byte-identical CSV output.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel ensembles per sweep point.
    #[arg(long)]
    trials: Option<usize>,
    /// Monte Carlo frames per ensemble.
    #[arg(long)]
    frames: Option<usize>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; the output is identical for any thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Extra key=value overrides (same keys as the config file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Verify that every report's empirical mean lies within 4 standard
    /// errors of its analytic value; exit 3 otherwise.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a key=value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// MSE versus SNR with default parameters (override via --set).
    SweepSnr {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// MSE versus path count at fixed SNR.
    SweepPaths {
        /// Path counts to evaluate.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
        r: Vec<usize>,
        /// SNR in dB for every point.
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Brute-force verification of a closed form.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Print the SIC schedule for a frame geometry.
    PlanDump {
        /// Delay rows of the frame.
        #[arg(long, default_value_t = 8)]
        m: usize,
        /// Doppler columns of the frame.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Sorted distinct path delays; the last one sets the padding depth.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        delays: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Joint power/denoising optimizer versus a (power-scale, eta) grid.
    Theorem1 {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Points per grid axis.
        #[arg(long, default_value_t = 400)]
        grid: usize,
        /// Relative tolerance for --check.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        check: bool,
    },
    /// Cancellation coefficient versus a 1-D grid on its quadratic.
    Zeta {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Grid step.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long)]
        check: bool,
    },
}

fn apply_sweep_args(cfg: &mut ExperimentConfig, args: &SweepArgs) -> otfs_aircomp::Result<()> {
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or(otfs_aircomp::Error::InvalidConfig {
                field: "set",
                reason: format!("expected KEY=VALUE, got `{kv}`"),
            })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(frames) = args.frames {
        cfg.frames = frames;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    Ok(())
}

fn emit_reports(reports: &[MseReport], cfg: &ExperimentConfig, args: &SweepArgs) -> ExitCode {
    if cfg.out.is_none() {
        print!("{}", reports_to_csv(reports));
    }
    if args.check && !reports_consistent(reports, 4.0) {
        eprintln!("consistency gate failed: empirical mean departs from analytic by > 4 SE");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn config_error(e: otfs_aircomp::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, sweep } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return config_error(otfs_aircomp::Error::Io(e.to_string())),
            };
            let mut cfg = match ExperimentConfig::from_key_values(&text) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Err(e) = apply_sweep_args(&mut cfg, &sweep) {
                return config_error(e);
            }
            match run_sweep(&cfg) {
                Ok(reports) => emit_reports(&reports, &cfg, &sweep),
                Err(e) => config_error(e),
            }
        }
        Command::SweepSnr { sweep } => {
            let mut cfg = ExperimentConfig::default();
            if let Err(e) = apply_sweep_args(&mut cfg, &sweep) {
                return config_error(e);
            }
            match run_sweep(&cfg) {
                Ok(reports) => emit_reports(&reports, &cfg, &sweep),
                Err(e) => config_error(e),
            }
        }
        Command::SweepPaths { r, snr_db, sweep } => {
            let mut cfg = ExperimentConfig {
                snr_db: vec![snr_db],
                ..ExperimentConfig::default()
            };
            if let Err(e) = apply_sweep_args(&mut cfg, &sweep) {
                return config_error(e);
            }
            match sweep_paths(&cfg, &r) {
                Ok(reports) => emit_reports(&reports, &cfg, &sweep),
                Err(e) => config_error(e),
            }
        }
        Command::Oracle { which } => match which {
            OracleCommand::Theorem1 {
                seed,
                instances,
                grid,
                tol,
                check,
            } => {
                match otfs_aircomp::harness::theorem1_oracle_battery(seed, instances, grid, grid) {
                    Ok(worst) => {
                        println!(
                            "theorem1 oracle: {instances} instances, worst relative excess {worst:.3e} (tolerance {tol:.1e})"
                        );
                        if check && worst > tol {
                            return ExitCode::from(3);
                        }
                        ExitCode::SUCCESS
                    }
                    Err(e) => config_error(e),
                }
            }
            OracleCommand::Zeta {
                seed,
                instances,
                step,
                check,
            } => match otfs_aircomp::harness::zeta_oracle_battery(seed, instances, step) {
                Ok(worst) => {
                    println!(
                            "zeta oracle: {instances} instances, worst |grid - closed| {worst:.3e} (step {step:.1e})"
                        );
                    if check && worst > step + 1e-12 {
                        return ExitCode::from(3);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(e),
            },
        },
        Command::PlanDump { m, n, delays } => {
            if delays.is_empty() {
                return config_error(otfs_aircomp::Error::InvalidConfig {
                    field: "delays",
                    reason: "empty delay list".into(),
                });
            }
            let l_max = *delays.last().unwrap();
            if l_max >= m {
                return config_error(otfs_aircomp::Error::InvalidConfig {
                    field: "delays",
                    reason: format!("maximum delay {l_max} must be < m = {m}"),
                });
            }
            let layout = ZpLayout::new(m, n, l_max);
            match otfs_aircomp::sic_plan(&layout, &delays) {
                Ok(plan) => {
                    print!("{}", SicPlan::dump_text(&plan));
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(e),
            }
        }
    }
}
