//! Simulator and numerical bound calculators for PC-ASGD, a delay-tolerant
//! decentralized SGD family.
//!
//! Agents sit on an undirected connected graph partitioned into reliable
//! clusters. Within a cluster states exchange instantly; across clusters they
//! arrive with a fixed staleness of `tau` iterations. Each iteration every
//! agent forms two candidate updates:
//!
//! * a *predicting* step that folds in stale neighbor states corrected by a
//!   delay-compensated gradient (stale gradient plus a diagonal outer-product
//!   curvature term), and
//! * a *clipping* step that drops cross-cluster edges entirely and mixes only
//!   within the cluster,
//!
//! then combines them with a tradeoff weight `theta` (fixed, Bernoulli,
//! uniform, or chosen per agent by a cosine criterion on the two candidate
//! displacements).
//!
//! The [`analysis`] module evaluates the family's convergence guarantees
//! numerically: a consensus bound (`lemma1_bound`), a linear-rate envelope
//! under the PL condition (`theorem1_*`), and a sublinear-rate envelope for
//! smooth nonconvex objectives (`theorem2_*`), with all constants either
//! analytic or estimated as empirical suprema from a finished run.
//!
//! The [`harness`] module turns TOML configs into seeded, byte-reproducible
//! runs, sweeps, trace CSV files, and bound reports.

pub mod analysis;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod staleness;
pub mod topology;

pub use analysis::{BoundInputs, BoundReport, Provenance};
pub use harness::{ExperimentConfig, MetricsTrace, TraceRow};
pub use objective::{GradientSample, ObjectiveKind, ObjectiveSpec};
pub use optimizer::{AlgorithmConfig, CriterionSign, PvChoice, StepRecord, Variant};
pub use staleness::{NeighborView, StateHistory};
pub use topology::{MatrixRole, MixingMatrix, SpectralInfo, Topology};
