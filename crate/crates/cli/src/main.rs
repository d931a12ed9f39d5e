//! `pcasgd`: run seeded experiments, sweep a parameter axis, validate
//! mixing-matrix invariants, or recompute bound reports from saved traces.
//!
//! Exit codes: 0 success, 1 failed validation or runtime error, 2 bad
//! config or arguments, 3 divergence detected.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcasgd_core::analysis::AnalysisError;
use pcasgd_core::harness::config::{ConfigError, ExperimentConfig};
use pcasgd_core::harness::report::render_report;
use pcasgd_core::harness::runner::{
    bounds_from_files, execute_run, execute_sweep, threads_from_env, validate_config,
    RunnerError, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "pcasgd",
    version,
    about = "Deterministic simulator and convergence-bound calculators for \
             delay-tolerant decentralized SGD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed; write trace CSVs and bound reports.
    Run {
        /// Path to a TOML experiment config.
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: run.out_dir from the config, else "runs").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-key config override, e.g. --override algorithm.eta=0.01
        /// (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the config once per axis value (all seeds each) and write
    /// summary.csv. PCASGD_THREADS caps worker threads (default sequential).
    Sweep {
        config: PathBuf,
        /// Axis to vary: tau, theta, or variant.
        #[arg(long)]
        axis: String,
        /// Axis values (comma-separated or repeated).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check every mixing-matrix invariant and print spectral quantities.
    Validate {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute the bound report from a saved trace CSV and its config.
    Bounds {
        trace: PathBuf,
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn exit_for(err: &RunnerError) -> u8 {
    match err {
        RunnerError::Config(_) | RunnerError::Invalid(_) => 2,
        RunnerError::Analysis(AnalysisError::DivergentTrace) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, RunnerError> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            mut overrides,
        } => {
            if let Some(s) = seed {
                overrides.push(format!("run.seeds=[{s}]"));
            }
            let cfg = ExperimentConfig::from_path_with_overrides(&config, &overrides)?;
            let out_dir = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs"));
            let outcomes = execute_run(&cfg, &out_dir)?;
            let mut any_divergence = false;
            for o in &outcomes {
                println!(
                    "seed {}: {} iterations, final loss {:.6e}, wall {:.3}s",
                    o.seed, o.iterations_completed, o.final_loss, o.wall_clock_secs
                );
                println!("  trace  -> {}", o.trace_path.display());
                if let Some(p) = &o.report_path {
                    println!("  bounds -> {}", p.display());
                }
                if o.divergence {
                    any_divergence = true;
                    println!(
                        "  DIVERGED: non-finite values after {} recorded iterations",
                        o.iterations_completed
                    );
                }
            }
            if any_divergence {
                eprintln!("divergence detected");
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
        } => {
            let axis = SweepAxis::parse(&axis).ok_or_else(|| {
                RunnerError::Invalid(format!(
                    "unknown sweep axis '{axis}' (expected tau, theta, or variant)"
                ))
            })?;
            let text = std::fs::read_to_string(&config).map_err(ConfigError::Io)?;
            let base = ExperimentConfig::from_toml_with_overrides(&text, &overrides)?;
            let out_dir = out
                .or_else(|| base.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(format!("sweep-{}", axis.name()));
            let (cells, summary_path) =
                execute_sweep(&text, &overrides, axis, &values, &out_dir, threads_from_env())?;
            let mut any_divergence = false;
            for cell in &cells {
                println!(
                    "{}={} seed {}: final loss {:.6e}, avg grad^2 {:.6e}, \
                     max consensus dev {:.6e}, predicting frequency {:.3}{}",
                    axis.name(),
                    cell.value,
                    cell.seed,
                    cell.final_loss,
                    cell.avg_grad_sq,
                    cell.max_consensus_dev,
                    cell.pv_pred_frequency,
                    if cell.divergence { " [DIVERGED]" } else { "" }
                );
                any_divergence |= cell.divergence;
            }
            println!("summary -> {}", summary_path.display());
            if any_divergence {
                eprintln!("divergence detected");
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Validate { config, overrides } => {
            let cfg = ExperimentConfig::from_path_with_overrides(&config, &overrides)?;
            let outcome = validate_config(&cfg)?;
            print!("{}", outcome.text);
            if outcome.ok {
                println!("all invariants hold");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("invariant checks failed");
                Ok(ExitCode::from(1))
            }
        }
        Command::Bounds {
            trace,
            config,
            overrides,
        } => {
            let cfg = ExperimentConfig::from_path_with_overrides(&config, &overrides)?;
            let report = bounds_from_files(&trace, &cfg)?;
            print!("{}", render_report(&report));
            Ok(ExitCode::SUCCESS)
        }
    }
}
