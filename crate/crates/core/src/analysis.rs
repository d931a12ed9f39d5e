//! Run metrics, empirical constant estimation, and the convergence-bound
//! calculators (consensus bound, PL-case envelope, averaged-gradient
//! envelope).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::{symmetric_eigenvalues, SquareMatrix};
use crate::objective::{Objective, ObjectiveError, ObjectiveKind};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no spectral gap: delta2 = {0} >= 1")]
    NoSpectralGap(f64),
    #[error("step size breaks the PL-envelope hypothesis: eta = {eta} not in (0, {limit}]")]
    StepSizeTheorem1 { eta: f64, limit: f64 },
    #[error("step size breaks the averaged-gradient envelope hypothesis: eta = {eta} not in (0, {limit})")]
    StepSizeTheorem2 { eta: f64, limit: f64 },
    #[error("contraction factor out of range: 2*mu*eta*tau = {0} not in (0, 1]")]
    BadContraction(f64),
    #[error("invalid bound input: {0}")]
    BadInput(String),
    #[error("consensus deviation needs at least one agent state")]
    EmptyStates,
    #[error("trace is divergent; constants are not meaningful")]
    DivergentTrace,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// max_i ||x_i - mean(x)||.
pub fn consensus_deviation(states: &[Vec<f64>]) -> Result<f64, AnalysisError> {
    if states.is_empty() {
        return Err(AnalysisError::EmptyStates);
    }
    let d = states[0].len();
    let mut mean = vec![0.0; d];
    for x in states {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    let n = states.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut worst = 0.0f64;
    for x in states {
        let dist2: f64 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(dist2.sqrt());
    }
    Ok(worst)
}

/// Where a constant's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Closed form known for the objective.
    Analytic,
    /// Supremum / moment measured over the run.
    Empirical,
    /// Taken directly from the experiment configuration.
    Config,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Analytic => "analytic",
            Self::Empirical => "empirical",
            Self::Config => "config",
        })
    }
}

/// Every scalar the bound calculators consume.
///
/// `mu`, `gamma_m` and `xi_m` may be NaN when the objective has no closed
/// form and the run produced no usable samples; calculators that need them
/// then fail with a descriptive error instead of emitting NaN silently.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Gradient second-moment root (stacked across agents).
    pub g: f64,
    /// Bound on each per-step compensation term.
    pub b: f64,
    /// Second-moment bound of the full compensated gradient.
    pub m: f64,
    /// Gradient noise level (stacked).
    pub sigma: f64,
    /// PL constant of the global objective.
    pub mu: f64,
    /// Smoothness (largest Hessian eigenvalue).
    pub gamma_m: f64,
    /// Smoothness of the gradient field (Hessian Lipschitz constant).
    pub xi_m: f64,
    /// Diagonal curvature-estimate error bound.
    pub eps: f64,
    /// Off-diagonal (diagonalization) error bound.
    pub eps_d: f64,
    pub lambda: f64,
    pub eta: f64,
    pub tau: usize,
    /// Largest tradeoff value logged over the run.
    pub theta_m: f64,
    /// Second eigenvalue of the predicting matrix.
    pub e2: f64,
    /// Second eigenvalue of the clipping matrix (1 when clusters disconnect
    /// the graph).
    pub e2_tilde: f64,
    /// max over iterations of theta_t * e2 + (1 - theta_t) * e2_tilde.
    pub delta2: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let nonneg = [
            ("G", self.g),
            ("B", self.b),
            ("M", self.m),
            ("sigma", self.sigma),
            ("eps", self.eps),
            ("eps_D", self.eps_d),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AnalysisError::BadInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(AnalysisError::BadInput(format!(
                "lambda must lie in (0,1], got {}",
                self.lambda
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(AnalysisError::BadInput(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.tau == 0 {
            return Err(AnalysisError::BadInput("tau must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta_m) {
            return Err(AnalysisError::BadInput(format!(
                "theta_m must lie in [0,1], got {}",
                self.theta_m
            )));
        }
        Ok(())
    }

    fn require_gap(&self) -> Result<f64, AnalysisError> {
        // partial_cmp so that a NaN delta2 also fails the gap requirement.
        if self.delta2.partial_cmp(&1.0) != Some(std::cmp::Ordering::Less) {
            return Err(AnalysisError::NoSpectralGap(self.delta2));
        }
        Ok(1.0 - self.delta2)
    }
}

/// eta * (G + (tau-1) * B * theta_m) / (1 - delta2): the uniform consensus
/// bound.
pub fn lemma1_bound(inputs: &BoundInputs) -> Result<f64, AnalysisError> {
    inputs.validate()?;
    let gap = inputs.require_gap()?;
    let tau1 = (inputs.tau - 1) as f64;
    Ok(inputs.eta * (inputs.g + tau1 * inputs.b * inputs.theta_m) / gap)
}

/// The constant block of the PL-case envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Constants {
    pub c1: f64,
    /// One entry per r = 1..tau-1 (empty when tau = 1).
    pub c_r: Vec<f64>,
    pub c2: f64,
    pub q: f64,
}

/// C1, the C_r terms, C2, and Q assembled term by term.
pub fn theorem1_constants(inputs: &BoundInputs) -> Result<Theorem1Constants, AnalysisError> {
    inputs.validate()?;
    let gap = inputs.require_gap()?;
    if !(inputs.mu.is_finite() && inputs.mu > 0.0) {
        return Err(AnalysisError::BadInput(format!(
            "mu must be positive and finite, got {}",
            inputs.mu
        )));
    }
    let limit = 1.0 / (2.0 * inputs.mu * inputs.tau as f64);
    if !(inputs.eta > 0.0 && inputs.eta <= limit) {
        return Err(AnalysisError::StepSizeTheorem1 {
            eta: inputs.eta,
            limit,
        });
    }
    let (g, b, eta, tau) = (inputs.g, inputs.b, inputs.eta, inputs.tau as f64);
    let c1 = (g + (tau - 1.0) * b * inputs.theta_m) / gap;
    let c_r: Vec<f64> = (1..inputs.tau)
        .map(|r| (2.0 * g + (r as f64 - 1.0) * b * inputs.theta_m) / gap)
        .collect();
    let c2 = (2.0 * g + (tau - 1.0) * b * inputs.theta_m) / gap;
    let sum_cr: f64 = c_r.iter().sum();
    let q = 2.0 * (1.0 - 2.0 * inputs.mu * eta * tau) * g * eta * c1
        + eta.powi(3) * inputs.xi_m * g / 2.0 * sum_cr
        + 2.0 * eta * eta * g * inputs.gamma_m * c1
        + g * eta * tau * inputs.sigma
        + eta * eta
            * g
            * (inputs.gamma_m + inputs.eps_d + inputs.eps + (1.0 - inputs.lambda) * g * g)
            * sum_cr
        + eta * g * g
        + eta * eta * inputs.gamma_m * g * tau * c2;
    Ok(Theorem1Constants { c1, c_r, c2, q })
}

/// (1 - 2 mu eta tau)^(t-1) * (F1 - F* - Q/(2 mu eta tau)) + Q/(2 mu eta tau)
/// evaluated at iteration t >= 1.
pub fn theorem1_envelope(
    f1_minus_fstar: f64,
    q: f64,
    mu: f64,
    eta: f64,
    tau: usize,
    t: usize,
) -> Result<f64, AnalysisError> {
    let rate = 2.0 * mu * eta * tau as f64;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(AnalysisError::BadContraction(rate));
    }
    if t == 0 {
        return Err(AnalysisError::BadInput("envelope iterations are 1-based".into()));
    }
    if t == 1 {
        // The contraction power telescopes away; returning the initial gap
        // directly keeps the t = 1 value exact instead of (f1 - floor) +
        // floor, which can round an ulp below f1.
        return Ok(f1_minus_fstar);
    }
    let contraction = 1.0 - rate;
    let floor = q / rate;
    Ok(contraction.powi((t - 1) as i32) * (f1_minus_fstar - floor) + floor)
}

/// Which printed form of the averaged-gradient constant R to use. The main
/// statement and the appendix proof disagree (eta^2 factors and tau vs
/// tau^2); both are kept so the discrepancy stays visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RFormula {
    #[default]
    Main,
    Appendix,
}

impl RFormula {
    pub fn name(self) -> &'static str {
        match self {
            Self::Main => "main",
            Self::Appendix => "appendix",
        }
    }
}

/// R without the step-size hypothesis check (the arithmetic itself only
/// needs the spectral gap). Used by bound reports, which flag the hypothesis
/// separately instead of suppressing the value.
pub fn theorem2_r_value(inputs: &BoundInputs, formula: RFormula) -> Result<f64, AnalysisError> {
    inputs.validate()?;
    let gap = inputs.require_gap()?;
    let (g, b, eta, tau) = (inputs.g, inputs.b, inputs.eta, inputs.tau as f64);
    let c1 = (g + (tau - 1.0) * b * inputs.theta_m) / gap;
    Ok(match formula {
        RFormula::Main => {
            2.0 * g * c1
                + tau * tau * eta * eta * inputs.gamma_m * inputs.m / 2.0
                + eta * inputs.sigma * inputs.sigma / 2.0
                + eta * inputs.sigma * tau * b
                + 2.0 * eta * inputs.gamma_m * (tau * b + g) * c1
        }
        RFormula::Appendix => {
            2.0 * g * eta * eta * c1
                + tau * eta * eta * inputs.gamma_m * inputs.m / 2.0
                + eta * inputs.sigma * inputs.sigma / 2.0
                + eta * inputs.sigma * tau * b
                + 2.0 * eta * eta * inputs.gamma_m * (tau * b + g) * c1
        }
    })
}

/// R with the full hypothesis check 0 < eta < 1/gamma_m.
pub fn theorem2_r(inputs: &BoundInputs, formula: RFormula) -> Result<f64, AnalysisError> {
    if !(inputs.gamma_m.is_finite() && inputs.gamma_m > 0.0) {
        return Err(AnalysisError::BadInput(format!(
            "gamma_m must be positive and finite, got {}",
            inputs.gamma_m
        )));
    }
    let limit = 1.0 / inputs.gamma_m;
    if !(inputs.eta > 0.0 && inputs.eta < limit) {
        return Err(AnalysisError::StepSizeTheorem2 {
            eta: inputs.eta,
            limit,
        });
    }
    theorem2_r_value(inputs, formula)
}

/// 2 (F1 - F*) / (T eta) + R / eta: the bound on the T-averaged squared
/// gradient norm.
pub fn theorem2_envelope(
    f1_minus_fstar: f64,
    r: f64,
    eta: f64,
    t_iters: usize,
) -> Result<f64, AnalysisError> {
    if t_iters == 0 {
        return Err(AnalysisError::BadInput("T must be >= 1".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AnalysisError::BadInput(format!("eta must be positive, got {eta}")));
    }
    Ok(2.0 * f1_minus_fstar / (t_iters as f64 * eta) + r / eta)
}

/// Suprema and moments accumulated while a run executes. All fields are
/// reductions (max / min), so memory stays constant in T.
#[derive(Debug, Clone, PartialEq)]
pub struct SupStats {
    /// max_t of the stacked gradient norm (drawn, stale-drawn, and true).
    pub g_sup: f64,
    /// max over (t, r) of the stacked per-step compensation-term norm.
    pub b_sup: f64,
    /// max over t of the stacked full compensated-gradient norm, squared.
    pub m_sup: f64,
    /// max over (t, agent) of ||drawn gradient - exact local gradient||.
    pub noise_sup: f64,
    /// min over visited points of (||grad F||^2 / 2) / (F - F*); NaN when no
    /// sample had F - F* above threshold.
    pub mu_min: f64,
    /// Number of points that contributed to `mu_min`.
    pub mu_samples: usize,
    /// max over visited points of lambda_max(hessian of F).
    pub gamma_sup: f64,
    /// max Hessian difference quotient along each agent's trajectory.
    pub xi_sup: f64,
    /// max over (t, agent) of ||lambda g⊙g - diag(local hessian)||.
    pub eps_sup: f64,
    /// max over t of sqrt(sum_i ||offdiag(local hessian_i)||_F^2).
    pub epsd_sup: f64,
    /// Largest logged tradeoff value.
    pub theta_logged_max: f64,
}

impl Default for SupStats {
    fn default() -> Self {
        Self {
            g_sup: 0.0,
            b_sup: 0.0,
            m_sup: 0.0,
            noise_sup: 0.0,
            mu_min: f64::INFINITY,
            mu_samples: 0,
            gamma_sup: 0.0,
            xi_sup: 0.0,
            eps_sup: 0.0,
            epsd_sup: 0.0,
            theta_logged_max: 0.0,
        }
    }
}

impl SupStats {
    pub fn mu_estimate(&self) -> f64 {
        if self.mu_samples == 0 {
            f64::NAN
        } else {
            self.mu_min
        }
    }
}

/// Threshold below which a visited point is too close to optimal for the PL
/// ratio to be numerically meaningful.
const MU_GAP_FLOOR: f64 = 1e-12;
/// Displacements below this contribute no Hessian difference quotient.
const XI_STEP_FLOOR: f64 = 1e-12;

/// Online estimator fed by the simulation loop, one call set per iteration.
#[derive(Debug, Default)]
pub struct ConstantsAccumulator {
    stats: SupStats,
    /// Per-agent previous (point, Hessian of F there) for the difference
    /// quotient.
    prev: Vec<Option<(Vec<f64>, SquareMatrix)>>,
}

impl ConstantsAccumulator {
    pub fn new(n_agents: usize) -> Self {
        Self {
            stats: SupStats::default(),
            prev: vec![None; n_agents],
        }
    }

    /// Observe the iteration-t snapshot: per-agent states, the drawn local
    /// gradients, and the exact local gradients (already computed for the
    /// metrics row).
    pub fn observe_snapshot(
        &mut self,
        objective: &Objective,
        states: &[Vec<f64>],
        drawn: &[Vec<f64>],
        exact: &[Vec<f64>],
        lambda: f64,
    ) -> Result<(), AnalysisError> {
        let fstar = objective.minimum_value();
        let analytic = objective.analytic_constants();
        let mut drawn_sq = 0.0;
        let mut exact_sq = 0.0;
        let mut epsd_sq = 0.0;
        for i in 0..states.len() {
            drawn_sq += sq_norm(&drawn[i]);
            exact_sq += sq_norm(&exact[i]);
            let noise: f64 = drawn[i]
                .iter()
                .zip(&exact[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            self.stats.noise_sup = self.stats.noise_sup.max(noise);

            // Curvature-estimate errors against the exact local Hessian.
            let h_local = objective.local_hessian(i, &states[i])?;
            let d = h_local.n();
            let mut eps_sq = 0.0;
            for (k, &dk) in drawn[i].iter().enumerate().take(d) {
                let est = lambda * dk * dk;
                let diff = est - h_local.get(k, k);
                eps_sq += diff * diff;
            }
            self.stats.eps_sup = self.stats.eps_sup.max(eps_sq.sqrt());
            for a in 0..d {
                for b in 0..d {
                    if a != b {
                        let v = h_local.get(a, b);
                        epsd_sq += v * v;
                    }
                }
            }

            // Global-objective curvature at the visited point, unless known
            // in closed form.
            if analytic.is_none() {
                let h_global = objective.global_hessian(&states[i])?;
                if let Ok(eigs) = symmetric_eigenvalues(&h_global) {
                    let lam_max = eigs.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
                    self.stats.gamma_sup = self.stats.gamma_sup.max(lam_max);
                }
                if let Some((px, ph)) = &self.prev[i] {
                    let step: f64 = states[i]
                        .iter()
                        .zip(px)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if step > XI_STEP_FLOOR {
                        let mut diff = SquareMatrix::zeros(h_global.n());
                        for a in 0..h_global.n() {
                            for b in 0..h_global.n() {
                                diff.set(a, b, h_global.get(a, b) - ph.get(a, b));
                            }
                        }
                        if let Ok(eigs) = symmetric_eigenvalues(&diff) {
                            let spectral = eigs.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
                            self.stats.xi_sup = self.stats.xi_sup.max(spectral / step);
                        }
                    }
                }
                self.prev[i] = Some((states[i].clone(), h_global));

                let gap = objective.global_loss(&states[i])? - fstar;
                if gap > MU_GAP_FLOOR {
                    let gf = objective.true_global_gradient(&states[i])?;
                    let ratio = 0.5 * sq_norm(&gf) / gap;
                    self.stats.mu_min = self.stats.mu_min.min(ratio);
                    self.stats.mu_samples += 1;
                }
            }
        }
        self.stats.g_sup = self.stats.g_sup.max(drawn_sq.sqrt()).max(exact_sq.sqrt());
        self.stats.epsd_sup = self.stats.epsd_sup.max(epsd_sq.sqrt());
        Ok(())
    }

    /// Observe one iteration's stale gradient draws: for each source agent,
    /// the largest squared norm drawn across receivers.
    pub fn observe_stale_draws(&mut self, per_source_max_sq: &BTreeMap<usize, f64>) {
        if per_source_max_sq.is_empty() {
            return;
        }
        let stacked: f64 = per_source_max_sq.values().sum();
        self.stats.g_sup = self.stats.g_sup.max(stacked.sqrt());
    }

    /// Observe one iteration's compensation terms: `per_source_r_max_sq[k]`
    /// holds, for source k, the per-r maxima (over receivers) of the squared
    /// term norms, and `per_source_dc_max_sq[k]` the squared full-sum norm.
    pub fn observe_compensation(
        &mut self,
        per_source_r_max_sq: &BTreeMap<usize, Vec<f64>>,
        per_source_dc_max_sq: &BTreeMap<usize, f64>,
    ) {
        if per_source_r_max_sq.is_empty() {
            return;
        }
        let tau = per_source_r_max_sq
            .values()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        for r in 0..tau {
            let stacked: f64 = per_source_r_max_sq
                .values()
                .map(|v| v.get(r).copied().unwrap_or(0.0))
                .sum();
            self.stats.b_sup = self.stats.b_sup.max(stacked.sqrt());
        }
        let dc_stacked: f64 = per_source_dc_max_sq.values().sum();
        self.stats.m_sup = self.stats.m_sup.max(dc_stacked);
    }

    pub fn observe_theta(&mut self, theta_values: &[f64]) {
        for &th in theta_values {
            self.stats.theta_logged_max = self.stats.theta_logged_max.max(th);
        }
    }

    pub fn finish(self) -> SupStats {
        self.stats
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// A [`BoundInputs`] plus where each field came from.
#[derive(Debug, Clone)]
pub struct EstimatedInputs {
    pub inputs: BoundInputs,
    pub provenance: BTreeMap<&'static str, Provenance>,
}

/// The provenance labels an objective's constants carry, as assigned by
/// [`estimate_constants`].
pub fn provenance_map(objective: &Objective) -> BTreeMap<&'static str, Provenance> {
    let mut provenance = BTreeMap::new();
    provenance.insert(
        "sigma",
        match objective.spec().kind {
            ObjectiveKind::LogisticSynthetic => Provenance::Empirical,
            _ => Provenance::Config,
        },
    );
    let curvature = if objective.analytic_constants().is_some() {
        Provenance::Analytic
    } else {
        Provenance::Empirical
    };
    for key in ["mu", "gamma_m", "xi_m"] {
        provenance.insert(key, curvature);
    }
    for key in ["G", "B", "M", "eps", "eps_D", "theta_m", "delta2"] {
        provenance.insert(key, Provenance::Empirical);
    }
    for key in ["lambda", "eta", "tau", "e2", "e2_tilde"] {
        provenance.insert(key, Provenance::Config);
    }
    provenance
}

/// Assemble bound inputs from a completed trace and its objective.
pub fn estimate_constants(
    trace: &crate::harness::MetricsTrace,
    objective: &Objective,
) -> Result<EstimatedInputs, AnalysisError> {
    if trace.divergence {
        return Err(AnalysisError::DivergentTrace);
    }
    let meta = &trace.meta;
    let stats = &trace.sup_stats;
    let provenance = provenance_map(objective);
    let n = objective.n_agents() as f64;

    let sigma = match objective.spec().kind {
        ObjectiveKind::LogisticSynthetic => n.sqrt() * stats.noise_sup,
        _ => n.sqrt() * objective.spec().noise_sigma,
    };

    let (mu, gamma_m, xi_m) = match objective.analytic_constants() {
        Some(c) => (c.mu, c.gamma_m, c.xi_m),
        None => (stats.mu_estimate(), stats.gamma_sup, stats.xi_sup),
    };

    let mut delta2 = f64::NEG_INFINITY;
    for row in &trace.rows {
        for th in [row.theta_min, row.theta_max] {
            delta2 = delta2.max(th * meta.e2 + (1.0 - th) * meta.e2_tilde);
        }
    }

    let inputs = BoundInputs {
        g: stats.g_sup,
        b: stats.b_sup,
        m: stats.m_sup,
        sigma,
        mu,
        gamma_m,
        xi_m,
        eps: stats.eps_sup,
        eps_d: stats.epsd_sup,
        lambda: meta.lambda,
        eta: meta.eta,
        tau: meta.tau,
        theta_m: stats.theta_logged_max,
        e2: meta.e2,
        e2_tilde: meta.e2_tilde,
        delta2,
    };
    Ok(EstimatedInputs { inputs, provenance })
}

/// The iteration labels the envelopes are evaluated at: {1, T/2, T},
/// deduplicated for tiny T.
pub fn envelope_points(t_total: usize) -> Vec<usize> {
    let mut pts = vec![1, (t_total / 2).max(1), t_total.max(1)];
    pts.dedup();
    pts
}

/// Every bound quantity computable for one completed run. Pieces whose
/// hypotheses fail are None, with the reason recorded in `notes` instead of
/// being silently dropped.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub provenance: BTreeMap<&'static str, Provenance>,
    /// Initial optimality gap F(x_1) - F*.
    pub f1_minus_fstar: f64,
    pub iterations: usize,
    /// The uniform consensus bound.
    pub lemma1: Option<f64>,
    /// PL-envelope constants (needs mu > 0 and eta <= 1/(2 mu tau)).
    pub theorem1: Option<Theorem1Constants>,
    /// (t, envelope value) at the labels from [`envelope_points`].
    pub theorem1_envelope: Vec<(usize, f64)>,
    pub r_formula: RFormula,
    /// The averaged-gradient constant R (arithmetic needs only the gap).
    pub r: Option<f64>,
    /// Whether the eta < 1/gamma_m hypothesis of the averaged-gradient bound
    /// also holds.
    pub theorem2_step_ok: bool,
    /// (T, envelope value) at the labels from [`envelope_points`].
    pub theorem2_envelope: Vec<(usize, f64)>,
    pub notes: Vec<String>,
    pub measured_max_consensus_dev: f64,
    pub measured_avg_grad_sq: f64,
    pub measured_final_loss: f64,
}

/// The run measurements a bound report compares against, separable from the
/// in-memory trace so reports can also be rebuilt from a saved CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredSummary {
    pub f1_minus_fstar: f64,
    pub iterations: usize,
    pub max_consensus_dev: f64,
    pub avg_grad_sq: f64,
    pub final_loss: f64,
}

impl MeasuredSummary {
    pub fn from_rows(
        rows: &[crate::harness::TraceRow],
        fstar: f64,
    ) -> Result<Self, AnalysisError> {
        if rows.is_empty() {
            return Err(AnalysisError::BadInput("trace has no rows".into()));
        }
        Ok(Self {
            f1_minus_fstar: rows[0].loss - fstar,
            iterations: rows.len(),
            max_consensus_dev: rows.iter().fold(0.0f64, |m, r| m.max(r.consensus_dev)),
            avg_grad_sq: rows.iter().map(|r| r.grad_sq_norm).sum::<f64>() / rows.len() as f64,
            final_loss: rows[rows.len() - 1].loss,
        })
    }

    pub fn from_parsed_rows(
        rows: &[crate::harness::trace::ParsedRow],
        fstar: f64,
    ) -> Result<Self, AnalysisError> {
        if rows.is_empty() {
            return Err(AnalysisError::BadInput("trace has no rows".into()));
        }
        Ok(Self {
            f1_minus_fstar: rows[0].loss - fstar,
            iterations: rows.len(),
            max_consensus_dev: rows.iter().fold(0.0f64, |m, r| m.max(r.consensus_dev)),
            avg_grad_sq: rows.iter().map(|r| r.grad_sq_norm).sum::<f64>() / rows.len() as f64,
            final_loss: rows[rows.len() - 1].loss,
        })
    }
}

/// Estimate constants from a trace and evaluate every bound on them.
pub fn bound_report(
    trace: &crate::harness::MetricsTrace,
    objective: &Objective,
    formula: RFormula,
) -> Result<BoundReport, AnalysisError> {
    let est = estimate_constants(trace, objective)?;
    let measured = MeasuredSummary::from_rows(&trace.rows, objective.minimum_value())?;
    bound_report_from_parts(est, measured, formula)
}

/// Evaluate every bound on already-assembled inputs and measurements.
pub fn bound_report_from_parts(
    est: EstimatedInputs,
    measured: MeasuredSummary,
    formula: RFormula,
) -> Result<BoundReport, AnalysisError> {
    let t_total = measured.iterations;
    let f1_minus_fstar = measured.f1_minus_fstar;
    let points = envelope_points(t_total);
    let mut notes = Vec::new();

    let lemma1 = match lemma1_bound(&est.inputs) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("lemma1_bound unavailable: {e}"));
            None
        }
    };

    let theorem1 = match theorem1_constants(&est.inputs) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("theorem1 constants unavailable: {e}"));
            None
        }
    };
    let mut theorem1_envelope = Vec::new();
    if let Some(c) = &theorem1 {
        for &t in &points {
            let v = theorem1_envelope_at(f1_minus_fstar, c.q, &est.inputs, t)?;
            theorem1_envelope.push((t, v));
        }
    }

    let r = match theorem2_r_value(&est.inputs, formula) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("theorem2 R unavailable: {e}"));
            None
        }
    };
    let theorem2_step_ok = match theorem2_r(&est.inputs, formula) {
        Ok(_) => true,
        Err(e) => {
            notes.push(format!("theorem2 hypothesis fails: {e}"));
            false
        }
    };
    let mut theorem2_env = Vec::new();
    if let Some(rv) = r {
        for &t in &points {
            theorem2_env.push((t, theorem2_envelope(f1_minus_fstar, rv, est.inputs.eta, t)?));
        }
    }

    Ok(BoundReport {
        inputs: est.inputs,
        provenance: est.provenance,
        f1_minus_fstar,
        iterations: t_total,
        lemma1,
        theorem1,
        theorem1_envelope,
        r_formula: formula,
        r,
        theorem2_step_ok,
        theorem2_envelope: theorem2_env,
        notes,
        measured_max_consensus_dev: measured.max_consensus_dev,
        measured_avg_grad_sq: measured.avg_grad_sq,
        measured_final_loss: measured.final_loss,
    })
}

fn theorem1_envelope_at(
    f1_minus_fstar: f64,
    q: f64,
    inputs: &BoundInputs,
    t: usize,
) -> Result<f64, AnalysisError> {
    theorem1_envelope(f1_minus_fstar, q, inputs.mu, inputs.eta, inputs.tau, t)
}
