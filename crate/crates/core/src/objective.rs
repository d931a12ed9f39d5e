//! Local loss functions, stochastic gradients, and the diagonal Hessian
//! estimate.
//!
//! Analytic kinds (rosenbrock, rastrigin, quadratic-pl) are split uniformly
//! across agents, f_i = F/N, so every agent shares the same stationary
//! points; their stochastic gradients add zero-mean Gaussian noise with
//! per-coordinate standard deviation `noise_sigma / sqrt(d)` (total variance
//! at most `noise_sigma^2`). The logistic-synthetic kind holds a fixed
//! synthetic dataset sharded across agents and samples minibatches with
//! replacement instead; its `noise_sigma` is ignored.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SquareMatrix;
use crate::rng::{event_rng, Purpose};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("point has dimension {got}, objective expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("agent id {agent} out of range for {n} agents")]
    BadAgent { agent: usize, n: usize },
    #[error("lambda must lie in (0, 1], got {0}")]
    BadLambda(f64),
    #[error("invalid objective spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Rosenbrock,
    Rastrigin,
    QuadraticPl,
    LogisticSynthetic,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rosenbrock => "rosenbrock",
            Self::Rastrigin => "rastrigin",
            Self::QuadraticPl => "quadratic-pl",
            Self::LogisticSynthetic => "logistic-synthetic",
        }
    }
}

/// What objective to run, its dimension, how many agents share it, and the
/// stochasticity knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub dimension: usize,
    pub n_agents: usize,
    pub noise_sigma: f64,
    /// Minibatch size for logistic-synthetic; ignored by analytic kinds.
    pub batch_size: usize,
}

/// One stochastic gradient draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: Vec<f64>,
    pub is_noisy: bool,
}

/// lambda * (g ⊙ g): the diagonal outer-product curvature estimate.
pub fn hessian_diag_estimate(g: &[f64], lambda: f64) -> Result<Vec<f64>, ObjectiveError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(ObjectiveError::BadLambda(lambda));
    }
    Ok(g.iter().map(|&v| lambda * v * v).collect())
}

/// Analytic PL / smoothness constants when the objective has them in closed
/// form. Only quadratic-pl does: F(x) = ||x||^2 / 2 has constant Hessian I,
/// so mu = gamma = 1 and the Hessian Lipschitz constant is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticConstants {
    pub mu: f64,
    pub gamma_m: f64,
    pub xi_m: f64,
}

/// Fixed synthetic binary-classification data for logistic-synthetic.
#[derive(Debug, Clone)]
struct LogisticData {
    /// features[s] is a d-vector; labels[s] is +-1.
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    shard_size: usize,
}

/// Dataset shape constants: each agent owns `SHARD_SIZE` samples. The data
/// master seed is a fixed constant so the dataset is identical across runs
/// and run seeds (fixed design).
const SHARD_SIZE: usize = 64;
const LOGISTIC_DATA_MASTER: u64 = 0x1061_571c_da7a_5eed;

impl LogisticData {
    fn generate(n_agents: usize, dimension: usize) -> Self {
        let mut rng = event_rng(
            LOGISTIC_DATA_MASTER,
            Purpose::Init,
            &[n_agents as u64, dimension as u64],
        );
        let m_total = SHARD_SIZE * n_agents;
        let separator: Vec<f64> = (0..dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut features = Vec::with_capacity(m_total);
        let mut labels = Vec::with_capacity(m_total);
        for _ in 0..m_total {
            let x: Vec<f64> = (0..dimension)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let margin: f64 = x.iter().zip(&separator).map(|(a, b)| a * b).sum();
            labels.push(if margin >= 0.0 { 1.0 } else { -1.0 });
            features.push(x);
        }
        Self {
            features,
            labels,
            shard_size: SHARD_SIZE,
        }
    }

    fn m_total(&self) -> usize {
        self.features.len()
    }

    fn shard(&self, agent: usize) -> std::ops::Range<usize> {
        agent * self.shard_size..(agent + 1) * self.shard_size
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + exp(u)), overflow-safe.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Evaluator for an [`ObjectiveSpec`]: validates the spec once and (for
/// logistic-synthetic) materializes the dataset once.
#[derive(Debug, Clone)]
pub struct Objective {
    spec: ObjectiveSpec,
    data: Option<LogisticData>,
}

impl Objective {
    pub fn new(spec: ObjectiveSpec) -> Result<Self, ObjectiveError> {
        if spec.n_agents == 0 {
            return Err(ObjectiveError::BadSpec("n_agents must be >= 1".into()));
        }
        if spec.dimension == 0 {
            return Err(ObjectiveError::BadSpec("dimension must be >= 1".into()));
        }
        if spec.kind == ObjectiveKind::Rosenbrock && spec.dimension < 2 {
            return Err(ObjectiveError::BadSpec(
                "rosenbrock needs dimension >= 2".into(),
            ));
        }
        if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
            return Err(ObjectiveError::BadSpec(format!(
                "noise_sigma must be finite and >= 0, got {}",
                spec.noise_sigma
            )));
        }
        if spec.kind == ObjectiveKind::LogisticSynthetic && spec.batch_size == 0 {
            return Err(ObjectiveError::BadSpec("batch_size must be >= 1".into()));
        }
        let data = match spec.kind {
            ObjectiveKind::LogisticSynthetic => {
                Some(LogisticData::generate(spec.n_agents, spec.dimension))
            }
            _ => None,
        };
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.len() != self.spec.dimension {
            return Err(ObjectiveError::DimensionMismatch {
                got: x.len(),
                want: self.spec.dimension,
            });
        }
        Ok(())
    }

    fn check_agent(&self, agent: usize) -> Result<(), ObjectiveError> {
        if agent >= self.spec.n_agents {
            return Err(ObjectiveError::BadAgent {
                agent,
                n: self.spec.n_agents,
            });
        }
        Ok(())
    }

    /// F(x): the full objective, evaluated exactly.
    pub fn global_loss(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(x)?;
        Ok(match self.spec.kind {
            ObjectiveKind::Rosenbrock => rosenbrock_loss(x),
            ObjectiveKind::Rastrigin => rastrigin_loss(x),
            ObjectiveKind::QuadraticPl => quadratic_loss(x),
            ObjectiveKind::LogisticSynthetic => {
                let data = self.data.as_ref().unwrap();
                let mut total = 0.0;
                for s in 0..data.m_total() {
                    total += logistic_sample_loss(&data.features[s], data.labels[s], x);
                }
                total / data.m_total() as f64
            }
        })
    }

    /// ∇F(x): exact, no noise.
    pub fn true_global_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(x)?;
        Ok(match self.spec.kind {
            ObjectiveKind::Rosenbrock => rosenbrock_gradient(x),
            ObjectiveKind::Rastrigin => rastrigin_gradient(x),
            ObjectiveKind::QuadraticPl => x.to_vec(),
            ObjectiveKind::LogisticSynthetic => {
                let data = self.data.as_ref().unwrap();
                let mut g = vec![0.0; x.len()];
                for s in 0..data.m_total() {
                    logistic_sample_grad_into(&data.features[s], data.labels[s], x, 1.0, &mut g);
                }
                let scale = 1.0 / data.m_total() as f64;
                g.iter_mut().for_each(|v| *v *= scale);
                g
            }
        })
    }

    /// f_i(x): agent i's share. Analytic kinds use the uniform split F/N;
    /// logistic-synthetic averages agent i's shard over the full sample
    /// count, so shares still sum exactly to F.
    pub fn local_loss(&self, agent: usize, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_agent(agent)?;
        match self.spec.kind {
            ObjectiveKind::LogisticSynthetic => {
                self.check_dim(x)?;
                let data = self.data.as_ref().unwrap();
                let mut total = 0.0;
                for s in data.shard(agent) {
                    total += logistic_sample_loss(&data.features[s], data.labels[s], x);
                }
                Ok(total / data.m_total() as f64)
            }
            _ => Ok(self.global_loss(x)? / self.spec.n_agents as f64),
        }
    }

    /// ∇f_i(x): exact local gradient, no noise.
    pub fn local_gradient(&self, agent: usize, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_agent(agent)?;
        match self.spec.kind {
            ObjectiveKind::LogisticSynthetic => {
                self.check_dim(x)?;
                let data = self.data.as_ref().unwrap();
                let mut g = vec![0.0; x.len()];
                for s in data.shard(agent) {
                    logistic_sample_grad_into(&data.features[s], data.labels[s], x, 1.0, &mut g);
                }
                let scale = 1.0 / data.m_total() as f64;
                g.iter_mut().for_each(|v| *v *= scale);
                Ok(g)
            }
            _ => {
                let mut g = self.true_global_gradient(x)?;
                let scale = 1.0 / self.spec.n_agents as f64;
                g.iter_mut().for_each(|v| *v *= scale);
                Ok(g)
            }
        }
    }

    /// A stochastic gradient draw for agent i at x using the caller's rng.
    ///
    /// Analytic kinds: ∇f_i(x) plus independent N(0, (noise_sigma/√d)^2) per
    /// coordinate; with noise_sigma = 0 the analytic gradient is returned
    /// exactly and the rng is untouched. Logistic-synthetic: a minibatch of
    /// `batch_size` shard samples drawn uniformly with replacement, scaled so
    /// the draw is an unbiased estimate of ∇f_i(x).
    pub fn stochastic_gradient<R: Rng>(
        &self,
        agent: usize,
        x: &[f64],
        rng: &mut R,
    ) -> Result<GradientSample, ObjectiveError> {
        self.check_agent(agent)?;
        self.check_dim(x)?;
        match self.spec.kind {
            ObjectiveKind::LogisticSynthetic => {
                let data = self.data.as_ref().unwrap();
                let shard = data.shard(agent);
                let b = self.spec.batch_size;
                // Unbiasedness: E[mean over batch] = mean over shard, and
                // ∇f_i = (shard_size / m_total) * shard mean.
                let scale = data.shard_size as f64 / (data.m_total() as f64 * b as f64);
                let mut g = vec![0.0; x.len()];
                for _ in 0..b {
                    let s = rng.random_range(shard.clone());
                    logistic_sample_grad_into(&data.features[s], data.labels[s], x, scale, &mut g);
                }
                Ok(GradientSample {
                    value: g,
                    is_noisy: true,
                })
            }
            _ => {
                let mut g = self.local_gradient(agent, x)?;
                if self.spec.noise_sigma == 0.0 {
                    return Ok(GradientSample {
                        value: g,
                        is_noisy: false,
                    });
                }
                let per_coord = self.spec.noise_sigma / (self.spec.dimension as f64).sqrt();
                let normal = Normal::new(0.0, per_coord).expect("finite std");
                for v in g.iter_mut() {
                    *v += normal.sample(rng);
                }
                Ok(GradientSample {
                    value: g,
                    is_noisy: true,
                })
            }
        }
    }

    /// ∇²f_i(x): exact local Hessian, used by the constant estimators.
    pub fn local_hessian(&self, agent: usize, x: &[f64]) -> Result<SquareMatrix, ObjectiveError> {
        self.check_agent(agent)?;
        self.check_dim(x)?;
        match self.spec.kind {
            ObjectiveKind::LogisticSynthetic => {
                let data = self.data.as_ref().unwrap();
                let d = x.len();
                let mut h = SquareMatrix::zeros(d);
                for s in data.shard(agent) {
                    let xs = &data.features[s];
                    let z: f64 = xs.iter().zip(x).map(|(a, b)| a * b).sum();
                    let w = sigmoid(z) * sigmoid(-z) / data.m_total() as f64;
                    for i in 0..d {
                        for j in 0..d {
                            h.set(i, j, h.get(i, j) + w * xs[i] * xs[j]);
                        }
                    }
                }
                Ok(h)
            }
            _ => {
                let mut h = self.global_hessian(x)?;
                let scale = 1.0 / self.spec.n_agents as f64;
                for i in 0..h.n() {
                    for j in 0..h.n() {
                        h.set(i, j, h.get(i, j) * scale);
                    }
                }
                Ok(h)
            }
        }
    }

    /// ∇²F(x): exact full Hessian.
    pub fn global_hessian(&self, x: &[f64]) -> Result<SquareMatrix, ObjectiveError> {
        self.check_dim(x)?;
        let d = x.len();
        Ok(match self.spec.kind {
            ObjectiveKind::Rosenbrock => {
                let mut h = SquareMatrix::zeros(d);
                for k in 0..d - 1 {
                    let hk = h.get(k, k) + 1200.0 * x[k] * x[k] - 400.0 * x[k + 1] + 2.0;
                    h.set(k, k, hk);
                    h.set(k + 1, k + 1, h.get(k + 1, k + 1) + 200.0);
                    h.set(k, k + 1, -400.0 * x[k]);
                    h.set(k + 1, k, -400.0 * x[k]);
                }
                h
            }
            ObjectiveKind::Rastrigin => {
                let mut h = SquareMatrix::zeros(d);
                let two_pi = 2.0 * std::f64::consts::PI;
                for (k, &xk) in x.iter().enumerate().take(d) {
                    h.set(k, k, 2.0 + 10.0 * two_pi * two_pi * (two_pi * xk).cos());
                }
                h
            }
            ObjectiveKind::QuadraticPl => SquareMatrix::identity(d),
            ObjectiveKind::LogisticSynthetic => {
                let data = self.data.as_ref().unwrap();
                let mut h = SquareMatrix::zeros(d);
                for s in 0..data.m_total() {
                    let xs = &data.features[s];
                    let z: f64 = xs.iter().zip(x).map(|(a, b)| a * b).sum();
                    let w = sigmoid(z) * sigmoid(-z) / data.m_total() as f64;
                    for i in 0..d {
                        for j in 0..d {
                            h.set(i, j, h.get(i, j) + w * xs[i] * xs[j]);
                        }
                    }
                }
                h
            }
        })
    }

    /// Closed-form constants, when the kind has them.
    pub fn analytic_constants(&self) -> Option<AnalyticConstants> {
        match self.spec.kind {
            ObjectiveKind::QuadraticPl => Some(AnalyticConstants {
                mu: 1.0,
                gamma_m: 1.0,
                xi_m: 0.0,
            }),
            _ => None,
        }
    }

    /// F*: the optimal value used by the convergence envelopes. The three
    /// analytic kinds attain 0; logistic loss is nonnegative, so 0 is a
    /// valid (conservative) lower bound there.
    pub fn minimum_value(&self) -> f64 {
        0.0
    }
}

fn rosenbrock_loss(x: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..x.len() - 1 {
        let a = x[k + 1] - x[k] * x[k];
        let b = 1.0 - x[k];
        total += 100.0 * a * a + b * b;
    }
    total
}

fn rosenbrock_gradient(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut g = vec![0.0; d];
    for k in 0..d - 1 {
        let a = x[k + 1] - x[k] * x[k];
        g[k] += -400.0 * x[k] * a - 2.0 * (1.0 - x[k]);
        g[k + 1] += 200.0 * a;
    }
    g
}

fn rastrigin_loss(x: &[f64]) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    10.0 * x.len() as f64
        + x.iter()
            .map(|&v| v * v - 10.0 * (two_pi * v).cos())
            .sum::<f64>()
}

fn rastrigin_gradient(x: &[f64]) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    x.iter()
        .map(|&v| 2.0 * v + 10.0 * two_pi * (two_pi * v).sin())
        .collect()
}

fn quadratic_loss(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|&v| v * v).sum::<f64>()
}

fn logistic_sample_loss(feat: &[f64], label: f64, w: &[f64]) -> f64 {
    let z: f64 = feat.iter().zip(w).map(|(a, b)| a * b).sum();
    softplus(-label * z)
}

/// Adds `scale * ∇ℓ_s(w)` into `out`.
fn logistic_sample_grad_into(feat: &[f64], label: f64, w: &[f64], scale: f64, out: &mut [f64]) {
    let z: f64 = feat.iter().zip(w).map(|(a, b)| a * b).sum();
    let coeff = -label * sigmoid(-label * z) * scale;
    for (o, &f) in out.iter_mut().zip(feat) {
        *o += coeff * f;
    }
}
