//! Metrics traces and their CSV form.
//!
//! Row `t` (1-based) records the state *before* update t, so row 1 is the
//! common initial point and the footer's final state is the result of the
//! T-th update. Floats are serialized with 17 significant digits so parsing
//! them back is exact, and the byte stream contains nothing
//! non-deterministic (wall-clock time lives only in memory / stdout).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::analysis::{EstimatedInputs, SupStats};
use crate::optimizer::{StepRecord, Variant};

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("trace CSV is empty")]
    Empty,
    #[error("bad header: expected '{want}', got '{got}'")]
    BadHeader { want: String, got: String },
    #[error("line {line}: expected {want} fields, got {got}")]
    FieldCount { line: usize, want: usize, got: usize },
    #[error("line {line}: {what}: {err}")]
    BadNumber {
        line: usize,
        what: &'static str,
        err: String,
    },
    #[error("line {line}: unrecognized footer line")]
    BadFooter { line: usize },
}

pub const CSV_HEADER: &str = "t,loss,grad_sq_norm,consensus_dev,theta,pv_pred_count";

/// Formats a float with 17 significant digits (exact f64 round trip).
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_float(s: &str, line: usize, what: &'static str) -> Result<f64, TraceParseError> {
    if s == "nan" {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|e| TraceParseError::BadNumber {
        line,
        what,
        err: e.to_string(),
    })
}

fn parse_int(s: &str, line: usize, what: &'static str) -> Result<usize, TraceParseError> {
    s.parse::<usize>().map_err(|e| TraceParseError::BadNumber {
        line,
        what,
        err: e.to_string(),
    })
}

/// Per-iteration metrics. `theta_min`/`theta_max` range over agents within
/// the iteration; the CSV's single `theta` column carries `theta_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub grad_sq_norm: f64,
    pub consensus_dev: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub pv_pred_count: usize,
}

/// Run parameters a trace needs to stay self-describing in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub n_agents: usize,
    pub dimension: usize,
    pub eta: f64,
    pub tau: usize,
    pub lambda: f64,
    /// The executed (normalized) variant.
    pub variant: Variant,
    pub e2: f64,
    pub e2_tilde: f64,
    pub seed: u64,
    pub iterations: usize,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct MetricsTrace {
    pub meta: RunMeta,
    pub rows: Vec<TraceRow>,
    /// Full per-iteration update records (not serialized to CSV).
    pub step_records: Vec<StepRecord>,
    /// Per-agent states after the final update.
    pub final_state: Vec<Vec<f64>>,
    pub divergence: bool,
    /// Measured run time; deliberately kept out of the CSV bytes.
    pub wall_clock_secs: f64,
    pub sup_stats: SupStats,
}

impl MetricsTrace {
    /// Serialize rows plus a `#`-prefixed footer. When constant estimates
    /// are supplied they are appended as machine-readable `# const` lines so
    /// a saved trace carries everything a bound recomputation needs.
    pub fn to_csv_string(&self, constants: Option<&EstimatedInputs>) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.t,
                fmt_float(row.loss),
                fmt_float(row.grad_sq_norm),
                fmt_float(row.consensus_dev),
                fmt_float(row.theta_max),
                row.pv_pred_count
            );
        }
        let _ = writeln!(out, "# divergence = {}", self.divergence);
        for (i, x) in self.final_state.iter().enumerate() {
            let joined: Vec<String> = x.iter().map(|&v| fmt_float(v)).collect();
            let _ = writeln!(out, "# final_state {i} = {}", joined.join(","));
        }
        if let Some(est) = constants {
            let inp = &est.inputs;
            let consts: [(&str, f64); 13] = [
                ("G", inp.g),
                ("B", inp.b),
                ("M", inp.m),
                ("sigma", inp.sigma),
                ("mu", inp.mu),
                ("gamma_m", inp.gamma_m),
                ("xi_m", inp.xi_m),
                ("eps", inp.eps),
                ("eps_D", inp.eps_d),
                ("theta_m", inp.theta_m),
                ("e2", inp.e2),
                ("e2_tilde", inp.e2_tilde),
                ("delta2", inp.delta2),
            ];
            for (name, v) in consts {
                let _ = writeln!(out, "# const {name} = {}", fmt_float(v));
            }
        }
        out
    }
}

/// One parsed CSV data row (the file stores only `theta_max`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub t: usize,
    pub loss: f64,
    pub grad_sq_norm: f64,
    pub consensus_dev: f64,
    pub theta: f64,
    pub pv_pred_count: usize,
}

/// A trace read back from disk.
#[derive(Debug, Clone)]
pub struct ParsedTrace {
    pub rows: Vec<ParsedRow>,
    pub final_state: Vec<Vec<f64>>,
    pub divergence: bool,
    pub constants: BTreeMap<String, f64>,
}

impl ParsedTrace {
    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TraceParseError::Empty)?;
        if header != CSV_HEADER {
            return Err(TraceParseError::BadHeader {
                want: CSV_HEADER.to_string(),
                got: header.to_string(),
            });
        }
        let mut rows = Vec::new();
        let mut final_state: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut divergence = false;
        let mut constants = BTreeMap::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("divergence = ") {
                    divergence = v == "true";
                } else if let Some(v) = rest.strip_prefix("final_state ") {
                    let (agent_s, vec_s) = v
                        .split_once(" = ")
                        .ok_or(TraceParseError::BadFooter { line })?;
                    let agent = parse_int(agent_s, line, "final_state agent")?;
                    let mut x = Vec::new();
                    for part in vec_s.split(',') {
                        x.push(parse_float(part, line, "final_state value")?);
                    }
                    final_state.push((agent, x));
                } else if let Some(v) = rest.strip_prefix("const ") {
                    let (name, val_s) = v
                        .split_once(" = ")
                        .ok_or(TraceParseError::BadFooter { line })?;
                    constants.insert(name.to_string(), parse_float(val_s, line, "const")?);
                } else {
                    return Err(TraceParseError::BadFooter { line });
                }
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 6 {
                return Err(TraceParseError::FieldCount {
                    line,
                    want: 6,
                    got: fields.len(),
                });
            }
            rows.push(ParsedRow {
                t: parse_int(fields[0], line, "t")?,
                loss: parse_float(fields[1], line, "loss")?,
                grad_sq_norm: parse_float(fields[2], line, "grad_sq_norm")?,
                consensus_dev: parse_float(fields[3], line, "consensus_dev")?,
                theta: parse_float(fields[4], line, "theta")?,
                pv_pred_count: parse_int(fields[5], line, "pv_pred_count")?,
            });
        }
        final_state.sort_by_key(|(agent, _)| *agent);
        Ok(Self {
            rows,
            final_state: final_state.into_iter().map(|(_, x)| x).collect(),
            divergence,
            constants,
        })
    }

    /// Reconstruct the per-iteration (theta_min, theta_max) pair from the
    /// stored theta column and predicting count. Only the adaptive
    /// per-agent variant can have a spread; every other variant logs one
    /// shared value.
    pub fn theta_range(&self, row: &ParsedRow, variant: Variant, n_agents: usize) -> (f64, f64) {
        if variant == Variant::PcPv {
            let min = if row.pv_pred_count == n_agents { 1.0 } else { 0.0 };
            let max = if row.pv_pred_count == 0 { 0.0 } else { 1.0 };
            (min, max)
        } else {
            (row.theta, row.theta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> MetricsTrace {
        MetricsTrace {
            meta: RunMeta {
                n_agents: 2,
                dimension: 2,
                eta: 0.01,
                tau: 2,
                lambda: 1.0,
                variant: Variant::PcFixed,
                e2: 0.5,
                e2_tilde: 1.0,
                seed: 1,
                iterations: 2,
            },
            rows: vec![
                TraceRow {
                    t: 1,
                    loss: 1.5,
                    grad_sq_norm: 0.25,
                    consensus_dev: 0.0,
                    theta_min: 0.5,
                    theta_max: 0.5,
                    pv_pred_count: 0,
                },
                TraceRow {
                    t: 2,
                    loss: 1.25e-3,
                    grad_sq_norm: 0.125,
                    consensus_dev: 1.0 / 3.0,
                    theta_min: 0.5,
                    theta_max: 0.5,
                    pv_pred_count: 0,
                },
            ],
            step_records: Vec::new(),
            final_state: vec![vec![0.1, -0.25], vec![0.1, 0.75]],
            divergence: false,
            wall_clock_secs: 0.5,
            sup_stats: SupStats::default(),
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let trace = sample_trace();
        let text = trace.to_csv_string(None);
        assert!(text.starts_with(CSV_HEADER));
        assert!(!text.contains("wall"));
        let parsed = ParsedTrace::parse(&text).unwrap();
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.rows[1].loss, 1.25e-3);
        assert_eq!(parsed.rows[1].consensus_dev, 1.0 / 3.0);
        assert_eq!(parsed.rows[1].pv_pred_count, 0);
        assert!(!parsed.divergence);
        assert_eq!(parsed.final_state, trace.final_state);
    }

    #[test]
    fn serialization_is_deterministic() {
        let trace = sample_trace();
        assert_eq!(trace.to_csv_string(None), trace.to_csv_string(None));
    }

    #[test]
    fn footer_constants_round_trip() {
        use crate::analysis::{BoundInputs, EstimatedInputs};
        let trace = sample_trace();
        let est = EstimatedInputs {
            inputs: BoundInputs {
                g: 2.0,
                b: 0.5,
                m: 0.25,
                sigma: 0.1,
                mu: f64::NAN,
                gamma_m: 3.0,
                xi_m: 0.0,
                eps: 0.01,
                eps_d: 0.02,
                lambda: 1.0,
                eta: 0.01,
                tau: 2,
                theta_m: 0.5,
                e2: 0.5,
                e2_tilde: 1.0,
                delta2: 0.75,
            },
            provenance: Default::default(),
        };
        let text = trace.to_csv_string(Some(&est));
        let parsed = ParsedTrace::parse(&text).unwrap();
        assert_eq!(parsed.constants["G"], 2.0);
        assert_eq!(parsed.constants["delta2"], 0.75);
        assert!(parsed.constants["mu"].is_nan());
    }

    #[test]
    fn rejects_wrong_header_and_garbage() {
        assert!(ParsedTrace::parse("").is_err());
        assert!(ParsedTrace::parse("a,b\n").is_err());
        let bad = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(
            ParsedTrace::parse(&bad),
            Err(TraceParseError::FieldCount { got: 3, .. })
        ));
    }

    #[test]
    fn theta_range_reconstruction() {
        let trace = sample_trace();
        let text = trace.to_csv_string(None);
        let parsed = ParsedTrace::parse(&text).unwrap();
        let row = &parsed.rows[0];
        assert_eq!(parsed.theta_range(row, Variant::PcFixed, 2), (0.5, 0.5));
        // Under the adaptive variant a mixed iteration spans {0, 1}.
        let mixed = ParsedRow {
            pv_pred_count: 1,
            theta: 1.0,
            ..row.clone()
        };
        assert_eq!(parsed.theta_range(&mixed, Variant::PcPv, 2), (0.0, 1.0));
        let all_pred = ParsedRow {
            pv_pred_count: 2,
            theta: 1.0,
            ..row.clone()
        };
        assert_eq!(parsed.theta_range(&all_pred, Variant::PcPv, 2), (1.0, 1.0));
    }
}
