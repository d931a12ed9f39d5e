//! Update laws and the simulation engine: the delay-compensated gradient,
//! predicting/clipping steps, tradeoff combination, the adaptive
//! cosine-criterion selection, the stale-communication baseline, and the
//! deterministic multi-agent experiment loop.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;

use crate::analysis::{consensus_deviation, AnalysisError, ConstantsAccumulator};
use crate::harness::trace::{MetricsTrace, RunMeta, TraceRow};
use crate::linalg::{dot, norm};
use crate::objective::{hessian_diag_estimate, Objective, ObjectiveError, ObjectiveKind};
use crate::rng::{event_rng, Purpose};
use crate::staleness::{view, NeighborView, StalenessError, StateHistory};
use crate::topology::{
    build_clipping_matrix, build_predicting_matrix, MixingMatrix, SpectralInfo, Topology,
    TopologyError,
};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid algorithm config: {0}")]
    BadConfig(String),
    #[error("self trajectory has {got} entries, expected tau = {want}")]
    TrajectoryLength { got: usize, want: usize },
    #[error("vector has dimension {got}, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("theta = {0} outside [0, 1]")]
    ThetaRange(f64),
    #[error("missing stale gradient for unreliable neighbor {0}")]
    MissingStaleGradient(usize),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Staleness(#[from] StalenessError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// The algorithm family. `p-asgd` and `c-asgd` are aliases that normalize to
/// the fixed-tradeoff form with theta pinned to 1 and 0 respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DAsgd,
    PAsgd,
    CAsgd,
    PcFixed,
    PcBernoulli,
    PcUniform,
    PcPv,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::DAsgd => "d-asgd",
            Self::PAsgd => "p-asgd",
            Self::CAsgd => "c-asgd",
            Self::PcFixed => "pc-fixed",
            Self::PcBernoulli => "pc-bernoulli",
            Self::PcUniform => "pc-uniform",
            Self::PcPv => "pc-pv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "d-asgd" => Self::DAsgd,
            "p-asgd" => Self::PAsgd,
            "c-asgd" => Self::CAsgd,
            "pc-fixed" => Self::PcFixed,
            "pc-bernoulli" => Self::PcBernoulli,
            "pc-uniform" => Self::PcUniform,
            "pc-pv" => Self::PcPv,
            _ => return None,
        })
    }

    /// Whether `theta` in the config is a required parameter.
    pub fn needs_theta(self) -> bool {
        matches!(self, Self::PcFixed | Self::PcBernoulli)
    }
}

/// Which direction vector the cosine criterion scores against: `paper`
/// (the default) scores displacements against the raw gradient; `descent`
/// flips the sign to score against the descent direction instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionSign {
    #[default]
    Paper,
    Descent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    pub eta: f64,
    pub lambda: f64,
    /// Fixed tradeoff value (pc-fixed) or Bernoulli probability
    /// (pc-bernoulli); ignored by the other variants.
    pub theta: f64,
    pub iterations: usize,
    pub criterion_sign: CriterionSign,
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OptimizerError::BadConfig(format!(
                "eta must be positive and finite, got {}",
                self.eta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(OptimizerError::BadConfig(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if self.variant.needs_theta() && !(0.0..=1.0).contains(&self.theta) {
            return Err(OptimizerError::BadConfig(format!(
                "theta must lie in [0, 1] for {}, got {}",
                self.variant.name(),
                self.theta
            )));
        }
        if self.iterations == 0 {
            return Err(OptimizerError::BadConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolve the alias variants onto the fixed-tradeoff code path.
    pub fn normalize(&self) -> Self {
        let mut cfg = self.clone();
        match self.variant {
            Variant::PAsgd => {
                cfg.variant = Variant::PcFixed;
                cfg.theta = 1.0;
            }
            Variant::CAsgd => {
                cfg.variant = Variant::PcFixed;
                cfg.theta = 0.0;
            }
            _ => {}
        }
        cfg
    }
}

/// Which branch an agent's update took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvChoice {
    Predicting,
    Clipping,
    NotApplicable,
}

impl std::fmt::Display for PvChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Predicting => "predicting",
            Self::Clipping => "clipping",
            Self::NotApplicable => "n/a",
        })
    }
}

/// Full record of one iteration's updates, indexed per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based label matching the trace row whose state this step consumed.
    pub t: usize,
    pub theta: Vec<f64>,
    pub choice: Vec<PvChoice>,
    pub x_t: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub x_pre: Vec<Vec<f64>>,
    pub x_cli: Vec<Vec<f64>>,
    pub x_next: Vec<Vec<f64>>,
}

/// Displacements shorter than this score zero in the cosine criterion.
pub const PV_NORM_FLOOR: f64 = 1e-15;

/// The tau per-step compensation terms: term_r = g + lambda*(g ⊙ g) ⊙
/// (traj[r] - traj[0]). The r = 0 term is exactly the stale gradient.
pub fn delay_compensated_terms(
    g_stale: &[f64],
    lambda: f64,
    tau: usize,
    self_trajectory: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, OptimizerError> {
    if self_trajectory.len() != tau {
        return Err(OptimizerError::TrajectoryLength {
            got: self_trajectory.len(),
            want: tau,
        });
    }
    let d = g_stale.len();
    for entry in self_trajectory {
        if entry.len() != d {
            return Err(OptimizerError::Dimension {
                got: entry.len(),
                want: d,
            });
        }
    }
    let hess = hessian_diag_estimate(g_stale, lambda)?;
    let base = &self_trajectory[0];
    let mut terms = Vec::with_capacity(tau);
    for snapshot in self_trajectory.iter().take(tau) {
        let mut term = Vec::with_capacity(d);
        for k in 0..d {
            term.push(g_stale[k] + hess[k] * (snapshot[k] - base[k]));
        }
        terms.push(term);
    }
    Ok(terms)
}

/// Sum of the tau compensation terms: the full delay-compensated gradient.
pub fn delay_compensated_gradient(
    g_stale: &[f64],
    lambda: f64,
    tau: usize,
    self_trajectory: &[Vec<f64>],
) -> Result<Vec<f64>, OptimizerError> {
    let terms = delay_compensated_terms(g_stale, lambda, tau, self_trajectory)?;
    let mut out = vec![0.0; g_stale.len()];
    for term in &terms {
        for (o, v) in out.iter_mut().zip(term) {
            *o += v;
        }
    }
    Ok(out)
}

/// w_ii * x_i + sum over reliable j of w_ij * x_j, accumulated in ascending
/// agent order. The predicting, clipping, and baseline steps all start from
/// this same loop so that whenever their weight rows agree the partial sums
/// agree bitwise.
fn reliable_mix(view: &NeighborView, row: &[f64]) -> Vec<f64> {
    let d = view.self_current.len();
    let mut x = vec![0.0; d];
    for (j, &w) in row.iter().enumerate() {
        let state = if j == view.agent_id {
            &view.self_current
        } else if let Some(s) = view.reliable_states.get(&j) {
            s
        } else {
            continue;
        };
        for k in 0..d {
            x[k] += w * state[k];
        }
    }
    x
}

fn descend(x: &mut [f64], eta: f64, g: &[f64]) {
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi -= eta * gi;
    }
}

/// The predicting update: mix reliable states, take the local gradient
/// step, and add each unreliable neighbor's stale state advanced by its
/// delay-compensated gradient.
pub fn predicting_step(
    view: &NeighborView,
    w_row: &[f64],
    g_i: &[f64],
    stale_grads: &BTreeMap<usize, Vec<f64>>,
    lambda: f64,
    tau: usize,
    eta: f64,
) -> Result<Vec<f64>, OptimizerError> {
    let mut x = reliable_mix(view, w_row);
    descend(&mut x, eta, g_i);
    for (k, x_stale) in &view.unreliable_states {
        let g_stale = stale_grads
            .get(k)
            .ok_or(OptimizerError::MissingStaleGradient(*k))?;
        let gdc = delay_compensated_gradient(g_stale, lambda, tau, &view.self_trajectory)?;
        let w = w_row[*k];
        for d in 0..x.len() {
            x[d] += w * (x_stale[d] - eta * gdc[d]);
        }
    }
    Ok(x)
}

/// The clipping update: mix within-cluster states only, take the local
/// gradient step.
pub fn clipping_step(view: &NeighborView, wt_row: &[f64], g_i: &[f64], eta: f64) -> Vec<f64> {
    let mut x = reliable_mix(view, wt_row);
    descend(&mut x, eta, g_i);
    x
}

/// The uncompensated baseline: like the predicting step but with stale
/// states used as-is.
pub fn baseline_dasgd_step(
    view: &NeighborView,
    w_row: &[f64],
    g_i: &[f64],
    eta: f64,
) -> Vec<f64> {
    let mut x = reliable_mix(view, w_row);
    descend(&mut x, eta, g_i);
    for (k, x_stale) in &view.unreliable_states {
        let w = w_row[*k];
        for d in 0..x.len() {
            x[d] += w * x_stale[d];
        }
    }
    x
}

/// theta * x_pre + (1 - theta) * x_cli.
pub fn combine(theta: f64, x_pre: &[f64], x_cli: &[f64]) -> Result<Vec<f64>, OptimizerError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(OptimizerError::ThetaRange(theta));
    }
    Ok(x_pre
        .iter()
        .zip(x_cli)
        .map(|(p, c)| theta * p + (1.0 - theta) * c)
        .collect())
}

/// Pick the branch whose displacement has the larger cosine score against
/// the gradient direction; ties go to predicting. A branch whose
/// displacement norm is below [`PV_NORM_FLOOR`] scores zero.
pub fn pv_select(
    x_pre: &[f64],
    x_cli: &[f64],
    x_t: &[f64],
    g_i: &[f64],
    sign: CriterionSign,
) -> (PvChoice, Vec<f64>) {
    let flip = match sign {
        CriterionSign::Paper => 1.0,
        CriterionSign::Descent => -1.0,
    };
    let score = |cand: &[f64]| {
        let delta: Vec<f64> = cand.iter().zip(x_t).map(|(a, b)| a - b).collect();
        let len = norm(&delta);
        if len < PV_NORM_FLOOR {
            0.0
        } else {
            flip * dot(&delta, g_i) / len
        }
    };
    if score(x_pre) >= score(x_cli) {
        (PvChoice::Predicting, x_pre.to_vec())
    } else {
        (PvChoice::Clipping, x_cli.to_vec())
    }
}

/// Initial-point sampling box per objective kind (shared by all agents:
/// every run starts from consensus, so the consensus bound's initial term
/// is exactly zero).
fn init_box(kind: ObjectiveKind) -> (f64, f64) {
    match kind {
        ObjectiveKind::Rosenbrock => (-0.45, -0.05),
        ObjectiveKind::Rastrigin => (-5.12, 5.12),
        ObjectiveKind::QuadraticPl => (-2.0, 2.0),
        ObjectiveKind::LogisticSynthetic => (-1.0, 1.0),
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Run with freshly built Metropolis mixing matrices.
pub fn run_experiment(
    topology: &Topology,
    objective: &Objective,
    config: &AlgorithmConfig,
    seed: u64,
) -> Result<MetricsTrace, OptimizerError> {
    let w = build_predicting_matrix(topology)?;
    let wt = build_clipping_matrix(topology)?;
    run_experiment_with_matrices(topology, &w, &wt, objective, config, seed)
}

/// Run the full experiment loop: T simultaneous-snapshot iterations, fully
/// deterministic given (topology, objective, config, seed). Non-finite
/// values abort the run with the divergence flag set rather than clamping.
pub fn run_experiment_with_matrices(
    topology: &Topology,
    w: &MixingMatrix,
    wt: &MixingMatrix,
    objective: &Objective,
    config: &AlgorithmConfig,
    seed: u64,
) -> Result<MetricsTrace, OptimizerError> {
    config.validate()?;
    let n = topology.n_agents();
    if objective.n_agents() != n {
        return Err(OptimizerError::BadConfig(format!(
            "objective is split over {} agents but topology has {n}",
            objective.n_agents()
        )));
    }
    let cfg = config.normalize();
    let d = objective.dimension();
    let tau = topology.delay();
    let t_total = cfg.iterations;
    let spectral = SpectralInfo::compute(w, wt)?;
    let started = Instant::now();

    let mut init_rng = event_rng(seed, Purpose::Init, &[]);
    let (lo, hi) = init_box(objective.spec().kind);
    let x0: Vec<f64> = (0..d).map(|_| init_rng.random_range(lo..hi)).collect();

    let mut history = StateHistory::new(n, tau);
    let mut current: Vec<Vec<f64>> = vec![x0.clone(); n];
    for i in 0..n {
        history.record(i, 0, x0.clone())?;
    }

    let mut acc = ConstantsAccumulator::new(n);
    let mut rows: Vec<TraceRow> = Vec::with_capacity(t_total);
    let mut records: Vec<StepRecord> = Vec::with_capacity(t_total);
    let mut divergence = false;

    for t in 0..t_total {
        // Metrics of the iteration-t snapshot (the state row t+1 reports).
        let mut loss = 0.0;
        let mut grad_sq = 0.0;
        let mut exact = Vec::with_capacity(n);
        for (i, state) in current.iter().enumerate() {
            loss += objective.local_loss(i, state)?;
            let gi = objective.local_gradient(i, state)?;
            grad_sq += sq_norm(&gi);
            exact.push(gi);
        }
        let consensus = consensus_deviation(&current)?;
        if !(loss.is_finite() && grad_sq.is_finite() && consensus.is_finite()) {
            divergence = true;
            break;
        }

        let mut drawn = Vec::with_capacity(n);
        for (i, state) in current.iter().enumerate() {
            let mut rng = event_rng(seed, Purpose::LocalGradient, &[i as u64, t as u64]);
            drawn.push(objective.stochastic_gradient(i, state, &mut rng)?.value);
        }

        let shared_theta = match cfg.variant {
            Variant::PcFixed => Some(cfg.theta),
            Variant::PcBernoulli => {
                let mut rng = event_rng(seed, Purpose::Theta, &[t as u64]);
                Some(if rng.random_bool(cfg.theta) { 1.0 } else { 0.0 })
            }
            Variant::PcUniform => {
                let mut rng = event_rng(seed, Purpose::Theta, &[t as u64]);
                Some(rng.random::<f64>())
            }
            _ => None,
        };

        let mut thetas = vec![1.0; n];
        let mut choices = vec![PvChoice::NotApplicable; n];
        let mut pres = Vec::with_capacity(n);
        let mut clis = Vec::with_capacity(n);
        let mut nexts = Vec::with_capacity(n);
        // Supremum bookkeeping for the stale draws and compensation terms,
        // keyed by source agent with maxima taken across receivers.
        let mut stale_max_sq: BTreeMap<usize, f64> = BTreeMap::new();
        let mut term_max_sq: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut dc_max_sq: BTreeMap<usize, f64> = BTreeMap::new();

        for i in 0..n {
            let v = view(&history, topology, i, t)?;
            let g_i = &drawn[i];

            let (x_pre, x_cli, x_next, theta_i, choice_i);
            if cfg.variant == Variant::DAsgd {
                let base = baseline_dasgd_step(&v, w.entries.row(i), g_i, cfg.eta);
                x_pre = base.clone();
                x_cli = base.clone();
                x_next = base;
                theta_i = 1.0;
                choice_i = PvChoice::Predicting;
            } else {
                let mut stale_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for (k, xk) in &v.unreliable_states {
                    let mut rng =
                        event_rng(seed, Purpose::StaleGradient, &[i as u64, *k as u64, t as u64]);
                    let gk = objective.stochastic_gradient(*k, xk, &mut rng)?.value;
                    let gk_sq = sq_norm(&gk);
                    stale_max_sq
                        .entry(*k)
                        .and_modify(|m| *m = m.max(gk_sq))
                        .or_insert(gk_sq);
                    let terms =
                        delay_compensated_terms(&gk, cfg.lambda, tau, &v.self_trajectory)?;
                    let slot = term_max_sq.entry(*k).or_insert_with(|| vec![0.0; tau]);
                    let mut dc_sq = vec![0.0; gk.len()];
                    for (r, term) in terms.iter().enumerate() {
                        slot[r] = slot[r].max(sq_norm(term));
                        for (a, b) in dc_sq.iter_mut().zip(term) {
                            *a += b;
                        }
                    }
                    let full_sq = sq_norm(&dc_sq);
                    dc_max_sq
                        .entry(*k)
                        .and_modify(|m| *m = m.max(full_sq))
                        .or_insert(full_sq);
                    stale_grads.insert(*k, gk);
                }

                let pre = predicting_step(
                    &v,
                    w.entries.row(i),
                    g_i,
                    &stale_grads,
                    cfg.lambda,
                    tau,
                    cfg.eta,
                )?;
                let cli = clipping_step(&v, wt.entries.row(i), g_i, cfg.eta);
                if pre == cli {
                    // The branches coincide (always the case when all
                    // neighbors are reliable): the update is the same point
                    // under every tradeoff value, logged canonically as the
                    // predicting branch with theta = 1.
                    x_next = pre.clone();
                    theta_i = 1.0;
                    choice_i = PvChoice::Predicting;
                } else if cfg.variant == Variant::PcPv {
                    let (c, chosen) =
                        pv_select(&pre, &cli, &v.self_current, g_i, cfg.criterion_sign);
                    theta_i = if c == PvChoice::Predicting { 1.0 } else { 0.0 };
                    choice_i = c;
                    x_next = chosen;
                } else {
                    let th = shared_theta.expect("non-adaptive variant has a shared theta");
                    x_next = combine(th, &pre, &cli)?;
                    theta_i = th;
                    choice_i = PvChoice::NotApplicable;
                }
                x_pre = pre;
                x_cli = cli;
            }

            thetas[i] = theta_i;
            choices[i] = choice_i;
            pres.push(x_pre);
            clis.push(x_cli);
            nexts.push(x_next);
        }

        if nexts.iter().any(|x| !all_finite(x)) {
            divergence = true;
            break;
        }

        acc.observe_snapshot(objective, &current, &drawn, &exact, cfg.lambda)?;
        acc.observe_stale_draws(&stale_max_sq);
        acc.observe_compensation(&term_max_sq, &dc_max_sq);
        acc.observe_theta(&thetas);

        let theta_min = thetas.iter().copied().fold(f64::INFINITY, f64::min);
        let theta_max = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pv_pred_count = choices
            .iter()
            .filter(|c| **c == PvChoice::Predicting)
            .count();
        rows.push(TraceRow {
            t: t + 1,
            loss,
            grad_sq_norm: grad_sq,
            consensus_dev: consensus,
            theta_min,
            theta_max,
            pv_pred_count,
        });
        records.push(StepRecord {
            t: t + 1,
            theta: thetas,
            choice: choices,
            x_t: current.clone(),
            g: drawn,
            x_pre: pres,
            x_cli: clis,
            x_next: nexts.clone(),
        });

        for (i, x) in nexts.into_iter().enumerate() {
            history.record(i, t + 1, x.clone())?;
            current[i] = x;
        }
    }

    Ok(MetricsTrace {
        meta: RunMeta {
            n_agents: n,
            dimension: d,
            eta: cfg.eta,
            tau,
            lambda: cfg.lambda,
            variant: cfg.variant,
            e2: spectral.e2,
            e2_tilde: spectral.e2_tilde,
            seed,
            iterations: t_total,
        },
        rows,
        step_records: records,
        final_state: current,
        divergence,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        sup_stats: acc.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveSpec;

    fn objective(kind: ObjectiveKind, d: usize, n: usize, sigma: f64) -> Objective {
        Objective::new(ObjectiveSpec {
            kind,
            dimension: d,
            n_agents: n,
            noise_sigma: sigma,
            batch_size: 8,
        })
        .unwrap()
    }

    fn algo(variant: Variant, theta: f64, iterations: usize) -> AlgorithmConfig {
        AlgorithmConfig {
            variant,
            eta: 0.1,
            lambda: 0.5,
            theta,
            iterations,
            criterion_sign: CriterionSign::Paper,
        }
    }

    #[test]
    fn dc_gradient_oracles() {
        // tau = 1: the stale gradient unchanged.
        let g = vec![2.0, -3.0];
        let traj = vec![vec![7.0, 7.0]];
        assert_eq!(
            delay_compensated_gradient(&g, 0.5, 1, &traj).unwrap(),
            vec![2.0, -3.0]
        );
        // Scalar hand case: (2 + 0) + (2 + 0.5*4*0.1) = 4.2.
        let traj = vec![vec![1.0], vec![1.1]];
        let got = delay_compensated_gradient(&[2.0], 0.5, 2, &traj).unwrap();
        assert!((got[0] - 4.2).abs() < 1e-12, "{got:?}");
        // Zero gradient vanishes for any tau.
        let traj = vec![vec![0.0], vec![5.0], vec![-2.0]];
        assert_eq!(
            delay_compensated_gradient(&[0.0], 1.0, 3, &traj).unwrap(),
            vec![0.0]
        );
        // Trajectory length contract.
        assert!(matches!(
            delay_compensated_gradient(&[1.0], 0.5, 3, &traj[..2]),
            Err(OptimizerError::TrajectoryLength { got: 2, want: 3 })
        ));
    }

    fn hand_view() -> NeighborView {
        // Agent 0 in clusters {0,1} | {2}, tau = 2.
        let mut reliable = BTreeMap::new();
        reliable.insert(1usize, vec![3.0, -1.0]);
        let mut unreliable = BTreeMap::new();
        unreliable.insert(2usize, vec![0.5, 0.5]);
        NeighborView {
            agent_id: 0,
            t: 5,
            reliable_states: reliable,
            unreliable_states: unreliable,
            self_current: vec![1.0, 2.0],
            self_trajectory: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        }
    }

    #[test]
    fn predicting_step_hand_oracle() {
        let v = hand_view();
        let w_row = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        let g0 = [0.2, -0.4];
        let mut stale = BTreeMap::new();
        stale.insert(2usize, vec![1.0, 2.0]);
        let got = predicting_step(&v, &w_row, &g0, &stale, 0.5, 2, 0.1).unwrap();
        // Independent term-by-term evaluation:
        //   g_dc = (1,2) + (1 + 0.5*1*1, 2 + 0.5*4*1) = (2.5, 6.0)
        //   x = 2/3*(1,2) + 1/6*(3,-1) - 0.1*(0.2,-0.4)
        //       + 1/6*((0.5,0.5) - 0.1*(2.5,6.0))
        let gdc = [2.5, 6.0];
        let want = [
            2.0 / 3.0 * 1.0 + 1.0 / 6.0 * 3.0 - 0.1 * 0.2 + 1.0 / 6.0 * (0.5 - 0.1 * gdc[0]),
            2.0 / 3.0 * 2.0 - 1.0 / 6.0 - 0.1 * (-0.4) + 1.0 / 6.0 * (0.5 - 0.1 * gdc[1]),
        ];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn predicting_step_without_unreliable_is_plain_sgd() {
        let mut v = hand_view();
        v.unreliable_states.clear();
        let w_row = [0.5, 0.5, 0.0];
        let g0 = [1.0, 1.0];
        let got = predicting_step(&v, &w_row, &g0, &BTreeMap::new(), 0.5, 2, 0.1).unwrap();
        let want = [0.5 * 1.0 + 0.5 * 3.0 - 0.1, 0.5 * 2.0 - 0.5 - 0.1];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn consensus_is_fixed_point_at_zero_step() {
        let mut v = hand_view();
        let xbar = vec![4.0, -2.0];
        v.self_current = xbar.clone();
        *v.reliable_states.get_mut(&1).unwrap() = xbar.clone();
        *v.unreliable_states.get_mut(&2).unwrap() = xbar.clone();
        v.self_trajectory = vec![xbar.clone(), xbar.clone()];
        let w_row = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        let mut stale = BTreeMap::new();
        stale.insert(2usize, vec![1.0, 2.0]);
        let got = predicting_step(&v, &w_row, &[0.3, 0.3], &stale, 0.5, 2, 0.0).unwrap();
        for (a, b) in got.iter().zip(&xbar) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_step_oracles() {
        // Singleton cluster: pure local step.
        let v = NeighborView {
            agent_id: 0,
            t: 0,
            reliable_states: BTreeMap::new(),
            unreliable_states: BTreeMap::new(),
            self_current: vec![1.0, 2.0],
            self_trajectory: vec![vec![1.0, 2.0]],
        };
        let got = clipping_step(&v, &[1.0], &[0.5, -0.5], 0.1);
        assert_eq!(got, vec![0.95, 2.05]);
        // Zero step, equal states: unchanged.
        let v = hand_view();
        let mut v2 = v.clone();
        v2.reliable_states.insert(1, v.self_current.clone());
        let got = clipping_step(&v2, &[0.5, 0.5, 0.0], &[9.0, 9.0], 0.0);
        assert_eq!(got, v.self_current);
    }

    #[test]
    fn baseline_equals_predicting_with_zero_compensation() {
        let v = hand_view();
        let w_row = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        let g0 = [0.2, -0.4];
        let base = baseline_dasgd_step(&v, &w_row, &g0, 0.1);
        let mut zero_stale = BTreeMap::new();
        zero_stale.insert(2usize, vec![0.0, 0.0]);
        let pred = predicting_step(&v, &w_row, &g0, &zero_stale, 0.5, 2, 0.1).unwrap();
        assert_eq!(base, pred);
    }

    #[test]
    fn combine_examples() {
        let pre = [2.0, 0.0];
        let cli = [0.0, 2.0];
        assert_eq!(combine(1.0, &pre, &cli).unwrap(), vec![2.0, 0.0]);
        assert_eq!(combine(0.0, &pre, &cli).unwrap(), vec![0.0, 2.0]);
        assert_eq!(combine(0.5, &pre, &cli).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            combine(1.5, &pre, &cli),
            Err(OptimizerError::ThetaRange(_))
        ));
    }

    #[test]
    fn pv_select_examples() {
        let x_t = [0.0, 0.0];
        let g = [1.0, 0.0];
        // Tie: identical branches choose predicting.
        let (c, v) = pv_select(&[1.0, 1.0], &[1.0, 1.0], &x_t, &g, CriterionSign::Paper);
        assert_eq!(c, PvChoice::Predicting);
        assert_eq!(v, vec![1.0, 1.0]);
        // Scores -1 vs +1: clipping wins under the printed criterion.
        let (c, v) = pv_select(&[-1.0, 0.0], &[1.0, 0.0], &x_t, &g, CriterionSign::Paper);
        assert_eq!(c, PvChoice::Clipping);
        assert_eq!(v, vec![1.0, 0.0]);
        // Positive rescaling of g leaves the choice alone.
        let g10 = [10.0, 0.0];
        let (c, _) = pv_select(&[-1.0, 0.0], &[1.0, 0.0], &x_t, &g10, CriterionSign::Paper);
        assert_eq!(c, PvChoice::Clipping);
        // The descent reading flips it.
        let (c, _) = pv_select(&[-1.0, 0.0], &[1.0, 0.0], &x_t, &g, CriterionSign::Descent);
        assert_eq!(c, PvChoice::Predicting);
        // A stationary branch scores zero: beats a negative-scoring branch.
        let (c, _) = pv_select(&[0.0, 0.0], &[-1.0, 0.0], &x_t, &g, CriterionSign::Paper);
        assert_eq!(c, PvChoice::Predicting);
    }

    #[test]
    fn single_agent_is_exact_gradient_descent() {
        let top = Topology::new(1, &[], vec![vec![0]], 1).unwrap();
        let ob = objective(ObjectiveKind::QuadraticPl, 2, 1, 0.0);
        for variant in [
            Variant::DAsgd,
            Variant::PAsgd,
            Variant::CAsgd,
            Variant::PcFixed,
            Variant::PcPv,
        ] {
            let cfg = algo(variant, 0.5, 25);
            let trace = run_experiment(&top, &ob, &cfg, 7).unwrap();
            assert!(!trace.divergence);
            assert_eq!(trace.rows.len(), 25);
            // x_{t+1} = (1 - eta) x_t exactly.
            let rec = &trace.step_records[3];
            for (next, cur) in rec.x_next[0].iter().zip(&rec.x_t[0]) {
                assert!((next - (1.0 - cfg.eta) * cur).abs() < 1e-15);
            }
            assert_eq!(trace.rows[10].theta_max, 1.0);
            assert_eq!(trace.rows[10].pv_pred_count, 1);
        }
    }

    #[test]
    fn fixed_theta_aliases_are_bitwise_identical() {
        let top = Topology::complete(3, vec![vec![0, 1], vec![2]], 2).unwrap();
        let ob = objective(ObjectiveKind::QuadraticPl, 2, 3, 0.1);
        let p = run_experiment(&top, &ob, &algo(Variant::PAsgd, 0.0, 20), 3).unwrap();
        let fixed1 = run_experiment(&top, &ob, &algo(Variant::PcFixed, 1.0, 20), 3).unwrap();
        assert_eq!(p.to_csv_string(None), fixed1.to_csv_string(None));
        assert_eq!(p.final_state, fixed1.final_state);

        let c = run_experiment(&top, &ob, &algo(Variant::CAsgd, 1.0, 20), 3).unwrap();
        let fixed0 = run_experiment(&top, &ob, &algo(Variant::PcFixed, 0.0, 20), 3).unwrap();
        assert_eq!(c.to_csv_string(None), fixed0.to_csv_string(None));

        // Degenerate Bernoulli probabilities pin the same paths.
        let b1 = run_experiment(&top, &ob, &algo(Variant::PcBernoulli, 1.0, 20), 3).unwrap();
        assert_eq!(b1.to_csv_string(None), fixed1.to_csv_string(None));
        let b0 = run_experiment(&top, &ob, &algo(Variant::PcBernoulli, 0.0, 20), 3).unwrap();
        assert_eq!(b0.to_csv_string(None), fixed0.to_csv_string(None));
    }

    #[test]
    fn single_cluster_collapses_all_variants() {
        let top = Topology::complete(3, vec![vec![0, 1, 2]], 2).unwrap();
        let ob = objective(ObjectiveKind::Rastrigin, 2, 3, 0.2);
        let reference = run_experiment(&top, &ob, &algo(Variant::DAsgd, 0.5, 30), 11)
            .unwrap()
            .to_csv_string(None);
        for variant in [
            Variant::PAsgd,
            Variant::CAsgd,
            Variant::PcFixed,
            Variant::PcBernoulli,
            Variant::PcUniform,
            Variant::PcPv,
        ] {
            let trace = run_experiment(&top, &ob, &algo(variant, 0.5, 30), 11).unwrap();
            assert_eq!(
                trace.to_csv_string(None),
                reference,
                "variant {} diverged from the single-cluster collapse",
                variant.name()
            );
        }
    }

    #[test]
    fn quadratic_descent_is_monotone_without_noise() {
        let top = Topology::complete(3, vec![vec![0, 1, 2]], 1).unwrap();
        let ob = objective(ObjectiveKind::QuadraticPl, 3, 3, 0.0);
        let trace = run_experiment(&top, &ob, &algo(Variant::PcFixed, 0.5, 50), 5).unwrap();
        for pair in trace.rows.windows(2) {
            assert!(pair[1].loss <= pair[0].loss + 1e-15);
        }
    }

    #[test]
    fn divergence_flag_aborts_early() {
        let top = Topology::complete(2, vec![vec![0], vec![1]], 1).unwrap();
        let ob = objective(ObjectiveKind::QuadraticPl, 2, 2, 0.0);
        let mut cfg = algo(Variant::PcFixed, 0.5, 100);
        cfg.eta = 1.0e8;
        let trace = run_experiment(&top, &ob, &cfg, 1).unwrap();
        assert!(trace.divergence);
        assert!(trace.rows.len() < 100);
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let top = Topology::complete(3, vec![vec![0, 1], vec![2]], 3).unwrap();
        let ob = objective(ObjectiveKind::Rosenbrock, 2, 3, 0.3);
        let cfg = algo(Variant::PcPv, 0.5, 40);
        let a = run_experiment(&top, &ob, &cfg, 9).unwrap();
        let b = run_experiment(&top, &ob, &cfg, 9).unwrap();
        assert_eq!(a.to_csv_string(None), b.to_csv_string(None));
        assert_eq!(a.final_state, b.final_state);
        // Different seed, different trajectory.
        let c = run_experiment(&top, &ob, &cfg, 10).unwrap();
        assert_ne!(a.to_csv_string(None), c.to_csv_string(None));
    }

    #[test]
    fn step_records_reconstruct_updates() {
        let top = Topology::complete(3, vec![vec![0, 1], vec![2]], 2).unwrap();
        let ob = objective(ObjectiveKind::QuadraticPl, 2, 3, 0.1);
        let trace = run_experiment(&top, &ob, &algo(Variant::PcFixed, 0.3, 30), 2).unwrap();
        for rec in &trace.step_records {
            for i in 0..3 {
                let rebuilt = combine(rec.theta[i], &rec.x_pre[i], &rec.x_cli[i]).unwrap();
                for (a, b) in rebuilt.iter().zip(&rec.x_next[i]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
