//! TOML experiment configuration: parsing, validation, and dotted-key
//! overrides.
//!
//! Config files use 1-based agent ids; everything internal is 0-based. All
//! validation happens at load time so a bad file fails before any run
//! starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::RFormula;
use crate::objective::{Objective, ObjectiveError, ObjectiveKind, ObjectiveSpec};
use crate::optimizer::{AlgorithmConfig, CriterionSign, OptimizerError, Variant};
use crate::topology::{
    build_clipping_matrix, build_predicting_matrix, build_predicting_matrix_uniform,
    validate_user_matrix, MixingMatrix, Topology, TopologyError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("invalid objective: {0}")]
    Objective(#[from] ObjectiveError),
    #[error("{0}")]
    Algorithm(#[from] OptimizerError),
    #[error("bad override '{key}': {reason}")]
    Override { key: String, reason: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: RawTopology,
    objective: RawObjective,
    algorithm: RawAlgorithm,
    run: RawRun,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    /// "complete" or "ring"; mutually exclusive with explicit `edges`.
    preset: Option<String>,
    n_agents: Option<usize>,
    /// 1-based endpoint pairs.
    edges: Option<Vec<[usize; 2]>>,
    /// 1-based ids, one list per reliable cluster; must partition the agents.
    clusters: Vec<Vec<usize>>,
    delay: usize,
    #[serde(default)]
    uniform_weights: bool,
    /// Optional user-supplied mixing weights (validated, never repaired).
    weights: Option<Vec<Vec<f64>>>,
    /// Optional per-edge delays [u, v, delay] (1-based); accepted and stored
    /// but the simulator currently applies the single `delay` uniformly.
    edge_delays: Option<Vec<[usize; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    kind: ObjectiveKind,
    dimension: usize,
    #[serde(default)]
    noise_sigma: f64,
    batch_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    variant: Variant,
    eta: f64,
    theta: Option<f64>,
    lambda: f64,
    iterations: usize,
    criterion_sign: Option<CriterionSign>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seeds: Vec<u64>,
    out_dir: Option<String>,
    /// "main" (default) or "appendix".
    r_formula: Option<String>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub objective: ObjectiveSpec,
    pub algorithm: AlgorithmConfig,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub r_formula: RFormula,
    pub uniform_weights: bool,
    pub user_weights: Option<Vec<Vec<f64>>>,
}

fn one_based(id: usize, n: usize, what: &str) -> Result<usize, ConfigError> {
    if id == 0 {
        return Err(ConfigError::Invalid(format!(
            "{what} uses agent id 0; config agent ids are 1-based"
        )));
    }
    if id > n {
        return Err(ConfigError::Invalid(format!(
            "{what} references agent {id} but there are only {n} agents"
        )));
    }
    Ok(id - 1)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_path_with_overrides(path, &[])
    }

    pub fn from_path_with_overrides(
        path: &Path,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse TOML, apply `key=value` overrides (dotted keys, e.g.
    /// `algorithm.eta=0.01`), then validate everything.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse()?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let raw = RawConfig::deserialize(toml::Value::Table(table))?;
        Self::build(raw)
    }

    fn build(raw: RawConfig) -> Result<Self, ConfigError> {
        let topology = build_topology(&raw.topology)?;
        let n = topology.n_agents();

        let objective = ObjectiveSpec {
            kind: raw.objective.kind,
            dimension: raw.objective.dimension,
            n_agents: n,
            noise_sigma: raw.objective.noise_sigma,
            batch_size: raw.objective.batch_size.unwrap_or(8),
        };
        // Construct once so a bad objective spec fails at load time.
        Objective::new(objective.clone())?;

        if raw.algorithm.variant.needs_theta() && raw.algorithm.theta.is_none() {
            return Err(ConfigError::Invalid(format!(
                "variant {} requires algorithm.theta",
                raw.algorithm.variant.name()
            )));
        }
        let algorithm = AlgorithmConfig {
            variant: raw.algorithm.variant,
            eta: raw.algorithm.eta,
            lambda: raw.algorithm.lambda,
            theta: raw.algorithm.theta.unwrap_or(0.5),
            iterations: raw.algorithm.iterations,
            criterion_sign: raw.algorithm.criterion_sign.unwrap_or_default(),
        };
        algorithm.validate()?;

        if raw.run.seeds.is_empty() {
            return Err(ConfigError::Invalid("run.seeds must not be empty".into()));
        }
        let r_formula = match raw.run.r_formula.as_deref() {
            None | Some("main") => RFormula::Main,
            Some("appendix") => RFormula::Appendix,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "run.r_formula must be 'main' or 'appendix', got '{other}'"
                )));
            }
        };

        if raw.topology.uniform_weights && raw.topology.weights.is_some() {
            return Err(ConfigError::Invalid(
                "topology.uniform_weights and topology.weights are mutually exclusive".into(),
            ));
        }

        let config = Self {
            topology,
            objective,
            algorithm,
            seeds: raw.run.seeds,
            out_dir: raw.run.out_dir.map(PathBuf::from),
            r_formula,
            uniform_weights: raw.topology.uniform_weights,
            user_weights: raw.topology.weights,
        };
        // Matrix construction also validates (uniform weights need a
        // complete graph; user matrices must satisfy every invariant).
        config.build_matrices()?;
        Ok(config)
    }

    /// The predicting and clipping mixing matrices this config selects.
    pub fn build_matrices(&self) -> Result<(MixingMatrix, MixingMatrix), ConfigError> {
        let w = if let Some(rows) = &self.user_weights {
            validate_user_matrix(&self.topology, rows)?
        } else if self.uniform_weights {
            build_predicting_matrix_uniform(&self.topology)?
        } else {
            build_predicting_matrix(&self.topology)?
        };
        let wt = build_clipping_matrix(&self.topology)?;
        Ok((w, wt))
    }

    pub fn build_objective(&self) -> Result<Objective, ConfigError> {
        Ok(Objective::new(self.objective.clone())?)
    }
}

fn build_topology(raw: &RawTopology) -> Result<Topology, ConfigError> {
    if raw.preset.is_some() && raw.edges.is_some() {
        return Err(ConfigError::Invalid(
            "topology.preset and topology.edges are mutually exclusive".into(),
        ));
    }
    let n = match raw.n_agents {
        Some(n) if n >= 1 => n,
        Some(_) => return Err(ConfigError::Invalid("topology.n_agents must be >= 1".into())),
        None => {
            return Err(ConfigError::Invalid(
                "topology.n_agents is required".into(),
            ))
        }
    };
    let mut clusters = Vec::with_capacity(raw.clusters.len());
    for (ci, members) in raw.clusters.iter().enumerate() {
        let mut converted = Vec::with_capacity(members.len());
        for &id in members {
            converted.push(one_based(id, n, &format!("topology.clusters[{ci}]"))?);
        }
        clusters.push(converted);
    }

    let mut topology = match raw.preset.as_deref() {
        Some("complete") => Topology::complete(n, clusters, raw.delay)?,
        Some("ring") => Topology::ring(n, clusters, raw.delay)?,
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "unknown topology.preset '{other}' (expected 'complete' or 'ring')"
            )));
        }
        None => {
            let raw_edges = raw.edges.as_ref().ok_or_else(|| {
                ConfigError::Invalid(
                    "topology needs either a preset or an explicit edges list".into(),
                )
            })?;
            let mut edges = Vec::with_capacity(raw_edges.len());
            for (ei, [a, b]) in raw_edges.iter().enumerate() {
                edges.push((
                    one_based(*a, n, &format!("topology.edges[{ei}]"))?,
                    one_based(*b, n, &format!("topology.edges[{ei}]"))?,
                ));
            }
            Topology::new(n, &edges, clusters, raw.delay)?
        }
    };

    if let Some(entries) = &raw.edge_delays {
        let mut map = std::collections::BTreeMap::new();
        for (ei, [a, b, d]) in entries.iter().enumerate() {
            let ia = one_based(*a, n, &format!("topology.edge_delays[{ei}]"))?;
            let ib = one_based(*b, n, &format!("topology.edge_delays[{ei}]"))?;
            if *d == 0 {
                return Err(ConfigError::Invalid(format!(
                    "topology.edge_delays[{ei}] has delay 0; delays must be >= 1"
                )));
            }
            map.insert((ia.min(ib), ia.max(ib)), *d);
        }
        topology.set_edge_delays(map);
    }
    Ok(topology)
}

fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let (key, value) = entry.split_once('=').ok_or_else(|| ConfigError::Override {
        key: entry.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim();
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::Override {
            key: key.to_string(),
            reason: "empty key segment".into(),
        });
    }
    let mut cursor = table;
    for seg in &segments[..segments.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override {
                key: key.to_string(),
                reason: format!("'{seg}' is not a table"),
            })?;
    }
    let leaf = segments[segments.len() - 1].to_string();
    cursor.insert(leaf, parse_override_value(value.trim()));
    Ok(())
}

/// Parse an override value with TOML scalar semantics, falling back to a
/// plain string (so `variant=pc-pv` works unquoted).
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[topology]
preset = "complete"
n_agents = 3
clusters = [[1, 2], [3]]
delay = 2

[objective]
kind = "quadratic-pl"
dimension = 2
noise_sigma = 0.1

[algorithm]
variant = "pc-fixed"
eta = 0.05
theta = 0.5
lambda = 0.5
iterations = 50

[run]
seeds = [1, 2]
"#;

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.topology.n_agents(), 3);
        assert_eq!(cfg.topology.delay(), 2);
        // 1-based [[1,2],[3]] became 0-based [[0,1],[2]].
        assert_eq!(cfg.topology.clusters(), &[vec![0, 1], vec![2]]);
        assert_eq!(cfg.objective.kind, ObjectiveKind::QuadraticPl);
        assert_eq!(cfg.objective.n_agents, 3);
        assert_eq!(cfg.objective.batch_size, 8);
        assert_eq!(cfg.algorithm.variant, Variant::PcFixed);
        assert_eq!(cfg.algorithm.criterion_sign, CriterionSign::Paper);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.r_formula, RFormula::Main);
        let (w, wt) = cfg.build_matrices().unwrap();
        assert_eq!(w.entries.n(), 3);
        assert_eq!(wt.entries.n(), 3);
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = BASE.replace("iterations = 50", "iterations = 50\nbogus = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn rejects_zero_based_ids() {
        let text = BASE.replace("clusters = [[1, 2], [3]]", "clusters = [[0, 1], [2]]");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("1-based"), "{err}");
    }

    #[test]
    fn rejects_bad_lambda_and_missing_theta() {
        let text = BASE.replace("lambda = 0.5", "lambda = 1.5");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");

        let text = BASE.replace("theta = 0.5\n", "");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");

        // Adaptive variant needs no theta.
        let text = BASE
            .replace("theta = 0.5\n", "")
            .replace("variant = \"pc-fixed\"", "variant = \"pc-pv\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_ok());
    }

    #[test]
    fn explicit_edges_and_presets() {
        let text = BASE.replace(
            "preset = \"complete\"",
            "edges = [[1, 2], [2, 3], [1, 3]]",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.topology.edges().len(), 3);

        // Preset + edges is ambiguous.
        let text = BASE.replace(
            "preset = \"complete\"",
            "preset = \"complete\"\nedges = [[1, 2]]",
        );
        assert!(ExperimentConfig::from_toml_str(&text).is_err());

        // Neither is underspecified.
        let text = BASE.replace("preset = \"complete\"\n", "");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());

        let text = BASE.replace("preset = \"complete\"", "preset = \"ring\"");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.topology.edges().len(), 3); // 3-ring == triangle
    }

    #[test]
    fn overrides_apply_with_toml_semantics() {
        let overrides = vec![
            "algorithm.eta=0.01".to_string(),
            "algorithm.variant=pc-pv".to_string(),
            "topology.delay=4".to_string(),
            "run.seeds=[7]".to_string(),
        ];
        let cfg = ExperimentConfig::from_toml_with_overrides(BASE, &overrides).unwrap();
        assert_eq!(cfg.algorithm.eta, 0.01);
        assert_eq!(cfg.algorithm.variant, Variant::PcPv);
        assert_eq!(cfg.topology.delay(), 4);
        assert_eq!(cfg.seeds, vec![7]);

        // Unknown keys are still rejected after the override lands.
        let bad = vec!["algorithm.nonsense=1".to_string()];
        assert!(ExperimentConfig::from_toml_with_overrides(BASE, &bad).is_err());
        // Malformed entry.
        let bad = vec!["no-equals-sign".to_string()];
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides(BASE, &bad),
            Err(ConfigError::Override { .. })
        ));
    }

    #[test]
    fn uniform_weights_need_complete_graph() {
        let text = BASE.replace("delay = 2", "delay = 2\nuniform_weights = true");
        assert!(ExperimentConfig::from_toml_str(&text).is_ok());
        let ring = text
            .replace("preset = \"complete\"", "preset = \"ring\"")
            .replace("n_agents = 3", "n_agents = 4")
            .replace("clusters = [[1, 2], [3]]", "clusters = [[1, 2], [3, 4]]");
        assert!(ExperimentConfig::from_toml_str(&ring).is_err());
    }

    #[test]
    fn user_weights_validated_never_repaired() {
        let good = BASE.replace(
            "delay = 2",
            "delay = 2\nweights = [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]",
        );
        let cfg = ExperimentConfig::from_toml_str(&good).unwrap();
        let (w, _) = cfg.build_matrices().unwrap();
        assert!(!w.lazied);
        assert_eq!(w.entries.get(0, 0), 0.5);

        // Rows that do not sum to one are rejected, not fixed.
        let bad = BASE.replace(
            "delay = 2",
            "delay = 2\nweights = [[0.9, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]",
        );
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn r_formula_parses() {
        let text = BASE.replace("seeds = [1, 2]", "seeds = [1, 2]\nr_formula = \"appendix\"");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.r_formula, RFormula::Appendix);
        let text = BASE.replace("seeds = [1, 2]", "seeds = [1, 2]\nr_formula = \"nope\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn edge_delays_accepted_and_stored() {
        let text = BASE.replace("delay = 2", "delay = 2\nedge_delays = [[1, 3, 4]]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let delays = cfg.topology.edge_delays().unwrap();
        assert_eq!(delays[&(0, 2)], 4);
    }
}
