//! Orchestration: execute configured runs, write traces and bound reports,
//! sweep a parameter axis (optionally across threads), validate mixing
//! matrices, and rebuild bound reports from saved traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    bound_report_from_parts, estimate_constants, provenance_map, AnalysisError, BoundInputs,
    BoundReport, EstimatedInputs, MeasuredSummary,
};
use crate::harness::config::{ConfigError, ExperimentConfig};
use crate::harness::report::render_report;
use crate::harness::trace::{fmt_float, MetricsTrace, ParsedTrace, TraceParseError};
use crate::optimizer::{run_experiment_with_matrices, OptimizerError};
use crate::topology::{
    build_mask_matrix, effective_delta2, mixing_invariant_checks, SpectralInfo, TopologyError,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("trace parse error: {0}")]
    TraceParse(#[from] TraceParseError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// One completed seed of a `run` invocation.
#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub divergence: bool,
    pub final_loss: f64,
    pub iterations_completed: usize,
    pub wall_clock_secs: f64,
    pub trace_path: PathBuf,
    pub report_path: Option<PathBuf>,
}

/// Run one seed in memory: trace, constant estimates, bound report. A
/// divergent run returns no estimates or report (the trace still carries
/// the divergence flag).
pub fn run_one(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(MetricsTrace, Option<EstimatedInputs>, Option<BoundReport>), RunnerError> {
    let (w, wt) = config.build_matrices()?;
    let objective = config.build_objective()?;
    let trace = run_experiment_with_matrices(
        &config.topology,
        &w,
        &wt,
        &objective,
        &config.algorithm,
        seed,
    )?;
    if trace.divergence {
        return Ok((trace, None, None));
    }
    let est = estimate_constants(&trace, &objective)?;
    let measured = MeasuredSummary::from_rows(&trace.rows, objective.minimum_value())?;
    let report = bound_report_from_parts(est.clone(), measured, config.r_formula)?;
    Ok((trace, Some(est), Some(report)))
}

/// Execute every seed of the config, writing `trace_<variant>_seed<N>.csv`
/// (with constants in the footer) and `bounds_<variant>_seed<N>.txt` into
/// `out_dir`.
pub fn execute_run(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<RunOutcome>, RunnerError> {
    fs::create_dir_all(out_dir)?;
    let (w, wt) = config.build_matrices()?;
    let objective = config.build_objective()?;
    let label = config.algorithm.variant.name();
    let mut outcomes = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let trace = run_experiment_with_matrices(
            &config.topology,
            &w,
            &wt,
            &objective,
            &config.algorithm,
            seed,
        )?;
        let est = if trace.divergence {
            None
        } else {
            Some(estimate_constants(&trace, &objective)?)
        };
        let trace_path = out_dir.join(format!("trace_{label}_seed{seed}.csv"));
        fs::write(&trace_path, trace.to_csv_string(est.as_ref()))?;
        let report_path = match est {
            Some(est) => {
                let measured =
                    MeasuredSummary::from_rows(&trace.rows, objective.minimum_value())?;
                let report = bound_report_from_parts(est, measured, config.r_formula)?;
                let path = out_dir.join(format!("bounds_{label}_seed{seed}.txt"));
                fs::write(&path, render_report(&report))?;
                Some(path)
            }
            None => None,
        };
        outcomes.push(RunOutcome {
            seed,
            divergence: trace.divergence,
            final_loss: trace.rows.last().map_or(f64::NAN, |r| r.loss),
            iterations_completed: trace.rows.len(),
            wall_clock_secs: trace.wall_clock_secs,
            trace_path,
            report_path,
        });
    }
    Ok(outcomes)
}

/// The sweepable parameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Tau,
    Theta,
    Variant,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tau" => Self::Tau,
            "theta" => Self::Theta,
            "variant" => Self::Variant,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Theta => "theta",
            Self::Variant => "variant",
        }
    }

    fn override_key(self) -> &'static str {
        match self {
            Self::Tau => "topology.delay",
            Self::Theta => "algorithm.theta",
            Self::Variant => "algorithm.variant",
        }
    }
}

/// One (axis value, seed) cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    pub final_loss: f64,
    pub avg_grad_sq: f64,
    pub max_consensus_dev: f64,
    /// Fraction of (iteration, agent) slots whose update took the
    /// predicting branch.
    pub pv_pred_frequency: f64,
    pub divergence: bool,
    pub trace_path: PathBuf,
}

pub const SWEEP_SUMMARY_HEADER: &str =
    "value,seed,final_loss,avg_grad_sq_norm,max_consensus_dev,pv_pred_frequency,divergence";

fn sanitize_component(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

struct SweepJob {
    config: ExperimentConfig,
    value: String,
    seed: u64,
}

fn run_sweep_job(job: &SweepJob, axis: SweepAxis, out_dir: &Path) -> Result<SweepCell, RunnerError> {
    let config = &job.config;
    let (w, wt) = config.build_matrices()?;
    let objective = config.build_objective()?;
    let trace = run_experiment_with_matrices(
        &config.topology,
        &w,
        &wt,
        &objective,
        &config.algorithm,
        job.seed,
    )?;
    let est = if trace.divergence {
        None
    } else {
        Some(estimate_constants(&trace, &objective)?)
    };
    let dir = out_dir.join(format!("{}-{}", axis.name(), sanitize_component(&job.value)));
    fs::create_dir_all(&dir)?;
    let trace_path = dir.join(format!(
        "trace_{}_seed{}.csv",
        config.algorithm.variant.name(),
        job.seed
    ));
    fs::write(&trace_path, trace.to_csv_string(est.as_ref()))?;

    let n_slots = (trace.rows.len() * config.topology.n_agents()) as f64;
    let pv_pred_frequency = if trace.rows.is_empty() {
        f64::NAN
    } else {
        trace.rows.iter().map(|r| r.pv_pred_count as f64).sum::<f64>() / n_slots
    };
    Ok(SweepCell {
        value: job.value.clone(),
        seed: job.seed,
        final_loss: trace.rows.last().map_or(f64::NAN, |r| r.loss),
        avg_grad_sq: if trace.rows.is_empty() {
            f64::NAN
        } else {
            trace.rows.iter().map(|r| r.grad_sq_norm).sum::<f64>() / trace.rows.len() as f64
        },
        max_consensus_dev: trace.rows.iter().fold(0.0f64, |m, r| m.max(r.consensus_dev)),
        pv_pred_frequency,
        divergence: trace.divergence,
        trace_path,
    })
}

/// Sweep `axis` over `values` (every seed per value), writing one trace per
/// cell plus `summary.csv`. `threads = None` or `Some(1)` runs sequentially;
/// `Some(k)` runs in waves of at most k scoped threads. The produced bytes
/// are identical either way: every cell is independent and deterministic,
/// and the summary is assembled in job order.
pub fn execute_sweep(
    config_text: &str,
    base_overrides: &[String],
    axis: SweepAxis,
    values: &[String],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(Vec<SweepCell>, PathBuf), RunnerError> {
    if values.is_empty() {
        return Err(RunnerError::Invalid("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut jobs = Vec::new();
    for value in values {
        let mut overrides = base_overrides.to_vec();
        overrides.push(format!("{}={}", axis.override_key(), value));
        let config = ExperimentConfig::from_toml_with_overrides(config_text, &overrides)?;
        for &seed in &config.seeds {
            jobs.push(SweepJob {
                config: config.clone(),
                value: value.clone(),
                seed,
            });
        }
    }

    let mut results: Vec<Option<Result<SweepCell, RunnerError>>> =
        (0..jobs.len()).map(|_| None).collect();
    match threads {
        None | Some(0) | Some(1) => {
            for (slot, job) in results.iter_mut().zip(&jobs) {
                *slot = Some(run_sweep_job(job, axis, out_dir));
            }
        }
        Some(k) => {
            let mut start = 0;
            while start < jobs.len() {
                let end = (start + k).min(jobs.len());
                let wave: Vec<Result<SweepCell, RunnerError>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = jobs[start..end]
                        .iter()
                        .map(|job| scope.spawn(move || run_sweep_job(job, axis, out_dir)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("sweep worker panicked"))
                        .collect()
                });
                for (offset, res) in wave.into_iter().enumerate() {
                    results[start + offset] = Some(res);
                }
                start = end;
            }
        }
    }

    let mut cells = Vec::with_capacity(jobs.len());
    for res in results {
        cells.push(res.expect("every sweep slot filled")?);
    }

    let mut summary = String::from(SWEEP_SUMMARY_HEADER);
    summary.push('\n');
    for cell in &cells {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            cell.value,
            cell.seed,
            fmt_float(cell.final_loss),
            fmt_float(cell.avg_grad_sq),
            fmt_float(cell.max_consensus_dev),
            fmt_float(cell.pv_pred_frequency),
            cell.divergence
        );
    }
    let summary_path = out_dir.join("summary.csv");
    fs::write(&summary_path, summary)?;
    Ok((cells, summary_path))
}

/// Read the thread cap from `PCASGD_THREADS` (unset, empty, or unparsable
/// means sequential).
pub fn threads_from_env() -> Option<usize> {
    std::env::var("PCASGD_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 2)
}

/// Mixing-matrix invariant checks plus the spectral quantities, as a
/// printable report. `ok` is false when any invariant fails.
#[derive(Debug)]
pub struct ValidationOutcome {
    pub ok: bool,
    pub text: String,
}

pub fn validate_config(config: &ExperimentConfig) -> Result<ValidationOutcome, RunnerError> {
    let top = &config.topology;
    let mut text = String::new();
    let mut ok = true;

    let clusters_1based: Vec<Vec<usize>> = top
        .clusters()
        .iter()
        .map(|c| c.iter().map(|&i| i + 1).collect())
        .collect();
    let _ = writeln!(
        text,
        "topology: {} agents, {} edges, clusters {:?}, delay {}",
        top.n_agents(),
        top.edges().len(),
        clusters_1based,
        top.delay()
    );

    let (w, wt) = config.build_matrices()?;
    let mask = build_mask_matrix(top, &w);
    for (label, m) in [("predicting", &w), ("clipping", &wt), ("mask", &mask)] {
        let _ = writeln!(text, "[{label} matrix] lazy transform applied: {}", m.lazied);
        for check in mixing_invariant_checks(m, top) {
            let status = if check.pass { "ok  " } else { "FAIL" };
            ok &= check.pass;
            let _ = writeln!(text, "  {status} {}: {}", check.name, check.detail);
        }
    }

    let spectral = SpectralInfo::compute(&w, &wt)?;
    let _ = writeln!(text, "e2 = {}", fmt_float(spectral.e2));
    let _ = writeln!(text, "e2_tilde = {}", fmt_float(spectral.e2_tilde));
    for theta in [0.0, 0.5, 1.0] {
        let d2 = effective_delta2(&[theta], spectral.e2, spectral.e2_tilde)?;
        let _ = writeln!(text, "delta2(theta={theta}) = {}", fmt_float(d2));
    }
    if spectral.e2_tilde >= 1.0 {
        let _ = writeln!(
            text,
            "note: clipping matrix has no spectral gap (multiple clusters); \
             consensus and envelope bounds need every logged theta > 0"
        );
    }
    Ok(ValidationOutcome { ok, text })
}

/// The footer constants a saved trace must carry for bound recomputation.
pub const FOOTER_CONSTS: [&str; 13] = [
    "G", "B", "M", "sigma", "mu", "gamma_m", "xi_m", "eps", "eps_D", "theta_m", "e2", "e2_tilde",
    "delta2",
];

/// Rebuild a bound report from a saved trace CSV plus the config it was run
/// with. Uses only the footer constants and the rows, so it needs no rerun
/// and works on traces moved between machines.
pub fn bounds_from_trace_text(
    text: &str,
    config: &ExperimentConfig,
) -> Result<BoundReport, RunnerError> {
    let parsed = ParsedTrace::parse(text)?;
    if parsed.divergence {
        return Err(AnalysisError::DivergentTrace.into());
    }
    let mut consts = BTreeMap::new();
    for name in FOOTER_CONSTS {
        let v = parsed.constants.get(name).ok_or_else(|| {
            RunnerError::Invalid(format!(
                "trace footer lacks '# const {name} = ...' (was the trace written by `run`?)"
            ))
        })?;
        consts.insert(name, *v);
    }
    let inputs = BoundInputs {
        g: consts["G"],
        b: consts["B"],
        m: consts["M"],
        sigma: consts["sigma"],
        mu: consts["mu"],
        gamma_m: consts["gamma_m"],
        xi_m: consts["xi_m"],
        eps: consts["eps"],
        eps_d: consts["eps_D"],
        lambda: config.algorithm.lambda,
        eta: config.algorithm.eta,
        tau: config.topology.delay(),
        theta_m: consts["theta_m"],
        e2: consts["e2"],
        e2_tilde: consts["e2_tilde"],
        delta2: consts["delta2"],
    };
    let objective = config.build_objective()?;
    let est = EstimatedInputs {
        inputs,
        provenance: provenance_map(&objective),
    };
    let measured = MeasuredSummary::from_parsed_rows(&parsed.rows, objective.minimum_value())?;
    Ok(bound_report_from_parts(est, measured, config.r_formula)?)
}

pub fn bounds_from_files(
    trace_path: &Path,
    config: &ExperimentConfig,
) -> Result<BoundReport, RunnerError> {
    let text = fs::read_to_string(trace_path)?;
    bounds_from_trace_text(&text, config)
}
