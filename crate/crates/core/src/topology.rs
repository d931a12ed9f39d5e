//! Agent graph, reliable clusters, and the three mixing matrices.
//!
//! * `W`  (predicting): Metropolis weights on the full graph, lazily
//!   transformed to keep the spectrum in (0, 1].
//! * `W~` (clipping): Metropolis weights recomputed on the within-cluster
//!   subgraph, so weight removed from cross-cluster edges is redistributed
//!   inside each cluster instead of dumped on the diagonal.
//! * `W'` (mask): `W` restricted to (agent, unreliable-neighbor) entries,
//!   zero elsewhere. Deliberately not renormalized; its row sums are below 1
//!   whenever an agent has unreliable neighbors.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::linalg::{symmetric_eigenvalues, LinalgError, SquareMatrix};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph not connected")]
    NotConnected,
    #[error("agent count must be >= 1")]
    NoAgents,
    #[error("edge ({0}, {1}) out of range for {2} agents")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-edge ({0}, {0}) not allowed; self-loops are implied")]
    SelfEdge(usize),
    #[error("clusters must partition the agents exactly: agent {0} appears {1} times")]
    BadPartition(usize, usize),
    #[error("delay must be >= 1")]
    BadDelay,
    #[error("unknown preset '{0}' (expected 'complete' or 'ring')")]
    UnknownPreset(String),
    #[error("uniform averaging requires a complete graph")]
    UniformNeedsComplete,
    #[error("user-supplied weight matrix failed validation: {0}")]
    UserMatrixInvalid(String),
    #[error("second eigenvalue undefined for a 1x1 matrix")]
    TooSmallForE2,
    #[error("empty tradeoff schedule")]
    EmptySchedule,
    #[error("spectral input out of range: {0}")]
    SpectralInput(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Undirected connected agent graph with a cluster partition and a fixed
/// inter-cluster delay. Agent ids are 0-based internally.
#[derive(Debug, Clone)]
pub struct Topology {
    n_agents: usize,
    /// Normalized (min, max) unordered pairs, no self-edges.
    edges: BTreeSet<(usize, usize)>,
    /// cluster_of[i] = index of the cluster containing agent i.
    cluster_of: Vec<usize>,
    clusters: Vec<Vec<usize>>,
    delay: usize,
    /// Accepted by the data model for forward compatibility; only the
    /// uniform `delay` is exercised by the simulator.
    edge_delays: Option<BTreeMap<(usize, usize), usize>>,
}

impl Topology {
    pub fn new(
        n_agents: usize,
        edge_list: &[(usize, usize)],
        clusters: Vec<Vec<usize>>,
        delay: usize,
    ) -> Result<Self, TopologyError> {
        if n_agents == 0 {
            return Err(TopologyError::NoAgents);
        }
        if delay == 0 {
            return Err(TopologyError::BadDelay);
        }
        let mut edges = BTreeSet::new();
        for &(a, b) in edge_list {
            if a >= n_agents || b >= n_agents {
                return Err(TopologyError::EdgeOutOfRange(a, b, n_agents));
            }
            if a == b {
                return Err(TopologyError::SelfEdge(a));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        // Exact partition check.
        let mut count = vec![0usize; n_agents];
        for c in &clusters {
            for &i in c {
                if i >= n_agents {
                    return Err(TopologyError::EdgeOutOfRange(i, i, n_agents));
                }
                count[i] += 1;
            }
        }
        for (i, &c) in count.iter().enumerate() {
            if c != 1 {
                return Err(TopologyError::BadPartition(i, c));
            }
        }
        let mut cluster_of = vec![0usize; n_agents];
        for (ci, c) in clusters.iter().enumerate() {
            for &i in c {
                cluster_of[i] = ci;
            }
        }
        let top = Self {
            n_agents,
            edges,
            cluster_of,
            clusters,
            delay,
            edge_delays: None,
        };
        if !top.is_connected() {
            return Err(TopologyError::NotConnected);
        }
        Ok(top)
    }

    pub fn complete(n_agents: usize, clusters: Vec<Vec<usize>>, delay: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for i in 0..n_agents {
            for j in (i + 1)..n_agents {
                edges.push((i, j));
            }
        }
        Self::new(n_agents, &edges, clusters, delay)
    }

    pub fn ring(n_agents: usize, clusters: Vec<Vec<usize>>, delay: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for i in 0..n_agents {
            let j = (i + 1) % n_agents;
            if i != j {
                edges.push((i, j));
            }
        }
        Self::new(n_agents, &edges, clusters, delay)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn set_edge_delays(&mut self, delays: BTreeMap<(usize, usize), usize>) {
        self.edge_delays = Some(delays);
    }

    pub fn edge_delays(&self) -> Option<&BTreeMap<(usize, usize), usize>> {
        self.edge_delays.as_ref()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_agents).filter(move |&j| self.has_edge(i, j))
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.cluster_of[i] == self.cluster_of[j]
    }

    /// Reliable neighbors of i (same cluster, adjacent), excluding i itself.
    pub fn reliable_neighbors(&self, i: usize) -> Vec<usize> {
        self.neighbors(i).filter(|&j| self.same_cluster(i, j)).collect()
    }

    /// Unreliable neighbors of i (adjacent, different cluster).
    pub fn unreliable_neighbors(&self, i: usize) -> Vec<usize> {
        self.neighbors(i).filter(|&j| !self.same_cluster(i, j)).collect()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut visited = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    visited += 1;
                    queue.push_back(j);
                }
            }
        }
        visited == self.n_agents
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Predicting,
    Clipping,
    Mask,
}

#[derive(Debug, Clone)]
pub struct MixingMatrix {
    pub entries: SquareMatrix,
    pub role: MatrixRole,
    /// Whether the lazy transform was applied during construction.
    pub lazied: bool,
}

/// Eigenvalues at or below this threshold trigger the lazy transform; it
/// absorbs the numerically-zero eigenvalues of rank-deficient averaging
/// matrices as well as genuinely negative spectra (even rings).
const LAZY_TRIGGER: f64 = 1e-9;
const STOCHASTIC_TOL: f64 = 1e-12;

fn metropolis_on(
    n: usize,
    has_edge: impl Fn(usize, usize) -> bool,
) -> SquareMatrix {
    let deg: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && has_edge(i, j)).count())
        .collect();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i && has_edge(i, j) {
                let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                m.set(i, j, w);
                off += w;
            }
        }
        m.set(i, i, 1.0 - off);
    }
    m
}

fn lazy_if_needed(m: SquareMatrix) -> Result<(SquareMatrix, bool), TopologyError> {
    let eigs = symmetric_eigenvalues(&m)?;
    let min = *eigs.last().expect("nonempty spectrum");
    if min <= LAZY_TRIGGER {
        Ok((m.lazy(), true))
    } else {
        Ok((m, false))
    }
}

/// Metropolis weights on the full graph, lazily transformed when the raw
/// spectrum touches zero or goes negative.
pub fn build_predicting_matrix(top: &Topology) -> Result<MixingMatrix, TopologyError> {
    let raw = metropolis_on(top.n_agents(), |i, j| top.has_edge(i, j));
    let (entries, lazied) = lazy_if_needed(raw)?;
    Ok(MixingMatrix {
        entries,
        role: MatrixRole::Predicting,
        lazied,
    })
}

/// Uniform averaging (all entries 1/N) before the lazy transform; only
/// defined on complete graphs.
pub fn uniform_averaging_raw(top: &Topology) -> Result<SquareMatrix, TopologyError> {
    let n = top.n_agents();
    if top.edges().len() != n * (n - 1) / 2 {
        return Err(TopologyError::UniformNeedsComplete);
    }
    let mut m = SquareMatrix::zeros(n);
    let w = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, w);
        }
    }
    Ok(m)
}

/// Uniform-averaging predicting matrix for complete graphs. The raw matrix
/// is a rank-1 projector (eigenvalue 0 with multiplicity N-1), so the lazy
/// transform always applies here.
pub fn build_predicting_matrix_uniform(top: &Topology) -> Result<MixingMatrix, TopologyError> {
    let raw = uniform_averaging_raw(top)?;
    let (entries, lazied) = lazy_if_needed(raw)?;
    Ok(MixingMatrix {
        entries,
        role: MatrixRole::Predicting,
        lazied,
    })
}

/// Validate a user-supplied predicting matrix. It is checked against every
/// mixing-matrix invariant but never repaired (no lazy transform).
pub fn validate_user_matrix(top: &Topology, rows: &[Vec<f64>]) -> Result<MixingMatrix, TopologyError> {
    let entries = SquareMatrix::from_rows(rows)?;
    if entries.n() != top.n_agents() {
        return Err(TopologyError::UserMatrixInvalid(format!(
            "matrix is {}x{} but topology has {} agents",
            entries.n(),
            entries.n(),
            top.n_agents()
        )));
    }
    let m = MixingMatrix {
        entries,
        role: MatrixRole::Predicting,
        lazied: false,
    };
    if let Some(fail) = check_mixing_invariants(&m, top) {
        return Err(TopologyError::UserMatrixInvalid(fail));
    }
    Ok(m)
}

/// Metropolis weights on the clipped (within-cluster) subgraph. Cross-cluster
/// entries are exactly zero; singleton clusters get an identity row.
pub fn build_clipping_matrix(top: &Topology) -> Result<MixingMatrix, TopologyError> {
    let raw = metropolis_on(top.n_agents(), |i, j| {
        top.has_edge(i, j) && top.same_cluster(i, j)
    });
    let (entries, lazied) = lazy_if_needed(raw)?;
    Ok(MixingMatrix {
        entries,
        role: MatrixRole::Clipping,
        lazied,
    })
}

/// `W` masked to (agent, unreliable-neighbor) entries, zero elsewhere.
/// Row sums intentionally fall below 1; the compensation term this matrix
/// weighs is additive, not an average.
pub fn build_mask_matrix(top: &Topology, w: &MixingMatrix) -> MixingMatrix {
    let n = top.n_agents();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for k in top.unreliable_neighbors(i) {
            m.set(i, k, w.entries.get(i, k));
        }
    }
    MixingMatrix {
        entries: m,
        role: MatrixRole::Mask,
        lazied: false,
    }
}

/// Second-largest eigenvalue of a symmetric doubly stochastic matrix.
///
/// Such a matrix has all eigenvalues in [-1, 1]; solver output that strays
/// outside by roundoff is clamped back, while anything farther out than the
/// clamp window is reported as an error since it means the input was not
/// actually stochastic.
pub fn second_eigenvalue(m: &SquareMatrix) -> Result<f64, TopologyError> {
    const CLAMP_WINDOW: f64 = 1e-9;
    if m.n() < 2 {
        return Err(TopologyError::TooSmallForE2);
    }
    let eigs = symmetric_eigenvalues(m)?;
    let raw = eigs[1];
    if !(-1.0 - CLAMP_WINDOW..=1.0 + CLAMP_WINDOW).contains(&raw) {
        return Err(TopologyError::SpectralInput(format!(
            "eigenvalue {raw} outside [-1,1] beyond roundoff"
        )));
    }
    Ok(raw.clamp(-1.0, 1.0))
}

/// delta2 = max over the schedule of theta*e2 + (1-theta)*e2_tilde.
///
/// e2_tilde may equal 1 (any multi-cluster clipping matrix is block-diagonal
/// and has a repeated unit eigenvalue), in which case the result reaches 1
/// whenever the schedule contains theta = 0; bound evaluators reject that
/// downstream as "no spectral gap".
pub fn effective_delta2(
    theta_schedule: &[f64],
    e2: f64,
    e2_tilde: f64,
) -> Result<f64, TopologyError> {
    if theta_schedule.is_empty() {
        return Err(TopologyError::EmptySchedule);
    }
    if !(0.0..1.0).contains(&e2) {
        return Err(TopologyError::SpectralInput(format!("e2 = {e2} not in [0,1)")));
    }
    if !(0.0..=1.0).contains(&e2_tilde) {
        return Err(TopologyError::SpectralInput(format!(
            "e2_tilde = {e2_tilde} not in [0,1]"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for &th in theta_schedule {
        if !(0.0..=1.0).contains(&th) {
            return Err(TopologyError::SpectralInput(format!("theta = {th} not in [0,1]")));
        }
        best = best.max(th * e2 + (1.0 - th) * e2_tilde);
    }
    Ok(best)
}

/// Spectral summary of a built (W, W~) pair.
#[derive(Debug, Clone, Copy)]
pub struct SpectralInfo {
    pub e2: f64,
    pub e2_tilde: f64,
}

impl SpectralInfo {
    /// For a single agent there is nothing to mix; both gaps are total.
    pub fn compute(w: &MixingMatrix, w_tilde: &MixingMatrix) -> Result<Self, TopologyError> {
        if w.entries.n() == 1 {
            return Ok(Self { e2: 0.0, e2_tilde: 0.0 });
        }
        Ok(Self {
            e2: second_eigenvalue(&w.entries)?,
            e2_tilde: second_eigenvalue(&w_tilde.entries)?,
        })
    }

    pub fn delta2(&self, theta_schedule: &[f64]) -> Result<f64, TopologyError> {
        effective_delta2(theta_schedule, self.e2, self.e2_tilde)
    }
}

/// One named invariant check; returns a human-readable description and
/// whether it passed. Used by both tests and the `validate` subcommand.
pub struct InvariantCheck {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

/// Run every invariant for a mixing matrix in its role. Returns the list of
/// checks (all roles) for reporting.
pub fn mixing_invariant_checks(m: &MixingMatrix, top: &Topology) -> Vec<InvariantCheck> {
    let n = m.entries.n();
    let mut checks = Vec::new();
    let stochastic = matches!(m.role, MatrixRole::Predicting | MatrixRole::Clipping);

    if stochastic {
        let worst_row = (0..n)
            .map(|i| (m.entries.row_sum(i) - 1.0).abs())
            .fold(0.0f64, f64::max);
        checks.push(InvariantCheck {
            name: "row sums = 1".into(),
            detail: format!("max |row sum - 1| = {worst_row:.3e}"),
            pass: worst_row <= STOCHASTIC_TOL,
        });
        let worst_col = (0..n)
            .map(|j| (m.entries.col_sum(j) - 1.0).abs())
            .fold(0.0f64, f64::max);
        checks.push(InvariantCheck {
            name: "column sums = 1".into(),
            detail: format!("max |col sum - 1| = {worst_col:.3e}"),
            pass: worst_col <= STOCHASTIC_TOL,
        });
    }

    let asym = m.entries.max_asymmetry();
    checks.push(InvariantCheck {
        name: "symmetric".into(),
        detail: format!("max asymmetry = {asym:.3e}"),
        pass: asym <= STOCHASTIC_TOL,
    });

    let min_entry = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| m.entries.get(i, j))
        .fold(f64::INFINITY, f64::min);
    checks.push(InvariantCheck {
        name: "entries nonnegative".into(),
        detail: format!("min entry = {min_entry:.3e}"),
        pass: min_entry >= 0.0,
    });

    // Sparsity pattern.
    let pattern_ok = (0..n).all(|i| {
        (0..n).all(|j| {
            let v = m.entries.get(i, j);
            if v == 0.0 {
                return true;
            }
            match m.role {
                MatrixRole::Predicting => i == j || top.has_edge(i, j),
                MatrixRole::Clipping => i == j || (top.has_edge(i, j) && top.same_cluster(i, j)),
                MatrixRole::Mask => top.has_edge(i, j) && !top.same_cluster(i, j),
            }
        })
    });
    checks.push(InvariantCheck {
        name: "sparsity pattern within graph".into(),
        detail: String::new(),
        pass: pattern_ok,
    });

    if stochastic {
        match symmetric_eigenvalues(&m.entries) {
            Ok(eigs) => {
                let min = *eigs.last().unwrap();
                let max = eigs[0];
                checks.push(InvariantCheck {
                    name: "spectrum in (0, 1]".into(),
                    detail: format!("eigenvalues in [{min:.6}, {max:.6}]"),
                    pass: min > 0.0 && max <= 1.0 + 1e-10,
                });
            }
            Err(e) => checks.push(InvariantCheck {
                name: "spectrum in (0, 1]".into(),
                detail: format!("eigensolver failed: {e}"),
                pass: false,
            }),
        }
    }

    checks
}

/// First failing invariant, if any.
pub fn check_mixing_invariants(m: &MixingMatrix, top: &Topology) -> Option<String> {
    mixing_invariant_checks(m, top)
        .into_iter()
        .find(|c| !c.pass)
        .map(|c| format!("{} ({})", c.name, c.detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cluster(n: usize) -> Vec<Vec<usize>> {
        vec![(0..n).collect()]
    }

    #[test]
    fn two_agent_path_metropolis_then_lazy() {
        let top = Topology::new(2, &[(0, 1)], one_cluster(2), 1).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        assert!(w.lazied);
        for (i, j, want) in [(0, 0, 0.75), (0, 1, 0.25), (1, 0, 0.25), (1, 1, 0.75)] {
            assert!((w.entries.get(i, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn complete3_uniform_raw_is_third() {
        let top = Topology::complete(3, one_cluster(3), 1).unwrap();
        let raw = uniform_averaging_raw(&top).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((raw.get(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let eigs = symmetric_eigenvalues(&raw).unwrap();
        assert!((eigs[0] - 1.0).abs() < 1e-12);
        assert!(eigs[1].abs() < 1e-12 && eigs[2].abs() < 1e-12);
        // Built form applies the lazy transform (zero eigenvalue).
        let built = build_predicting_matrix_uniform(&top).unwrap();
        assert!(built.lazied);
        assert!((second_eigenvalue(&built.entries).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn ring4_lazy_metropolis_spectrum() {
        let top = Topology::ring(4, one_cluster(4), 1).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        // Raw Metropolis on the 4-cycle is (I + A)/3 with adjacency spectrum
        // {2, 0, 0, -2}, i.e. {1, 1/3, 1/3, -1/3}; the negative eigenvalue
        // forces the lazy transform, giving {1, 2/3, 2/3, 1/3}.
        assert!(w.lazied);
        let eigs = symmetric_eigenvalues(&w.entries).unwrap();
        let want = [1.0, 2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (got, want) in eigs.iter().zip(want) {
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
        assert!((second_eigenvalue(&w.entries).unwrap() - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn clipping_complete3_two_clusters() {
        let top = Topology::complete(3, vec![vec![0, 1], vec![2]], 2).unwrap();
        // Raw Metropolis on the clipped subgraph, before the lazy transform.
        let raw = metropolis_on(3, |i, j| top.has_edge(i, j) && top.same_cluster(i, j));
        let want = [
            [0.5, 0.5, 0.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.0, 1.0],
        ];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert!((raw.get(i, j) - w).abs() < 1e-15);
            }
        }
        // The zero eigenvalue of the 2-block triggers the lazy transform, and
        // the disconnected clusters leave a repeated unit eigenvalue.
        let built = build_clipping_matrix(&top).unwrap();
        assert!(built.lazied);
        assert!((second_eigenvalue(&built.entries).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn clipping_single_cluster_equals_predicting() {
        let top = Topology::complete(3, one_cluster(3), 1).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        let wt = build_clipping_matrix(&top).unwrap();
        assert_eq!(w.entries, wt.entries);
    }

    #[test]
    fn clipping_all_singletons_is_identity() {
        let top = Topology::complete(3, vec![vec![0], vec![1], vec![2]], 1).unwrap();
        let wt = build_clipping_matrix(&top).unwrap();
        assert!(!wt.lazied);
        assert_eq!(wt.entries, SquareMatrix::identity(3));
    }

    #[test]
    fn mask_complete3_uniform() {
        let top = Topology::complete(3, vec![vec![0, 1], vec![2]], 2).unwrap();
        let uniform = MixingMatrix {
            entries: uniform_averaging_raw(&top).unwrap(),
            role: MatrixRole::Predicting,
            lazied: false,
        };
        let mask = build_mask_matrix(&top, &uniform);
        let t = 1.0 / 3.0;
        let want = [
            [0.0, 0.0, t],
            [0.0, 0.0, t],
            [t, t, 0.0],
        ];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert!((mask.entries.get(i, j) - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mask_single_cluster_is_zero() {
        let top = Topology::complete(4, one_cluster(4), 1).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        let mask = build_mask_matrix(&top, &w);
        assert_eq!(mask.entries, SquareMatrix::zeros(4));
    }

    #[test]
    fn mask_all_singletons_is_w_minus_diagonal() {
        let top = Topology::complete(3, vec![vec![0], vec![1], vec![2]], 1).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        let mask = build_mask_matrix(&top, &w);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { w.entries.get(i, j) };
                assert_eq!(mask.entries.get(i, j), want);
            }
        }
    }

    #[test]
    fn identity_second_eigenvalue_is_one() {
        assert!((second_eigenvalue(&SquareMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let err = Topology::new(4, &[(0, 1), (2, 3)], vec![vec![0, 1], vec![2, 3]], 1)
            .err()
            .unwrap();
        assert!(matches!(err, TopologyError::NotConnected));
        assert_eq!(err.to_string(), "graph not connected");
    }

    #[test]
    fn bad_partition_rejected() {
        assert!(Topology::complete(3, vec![vec![0, 1], vec![1, 2]], 1).is_err());
        assert!(Topology::complete(3, vec![vec![0, 1]], 1).is_err());
    }

    #[test]
    fn delta2_examples() {
        assert!((effective_delta2(&[1.0, 1.0], 0.4, 0.8).unwrap() - 0.4).abs() < 1e-15);
        assert!((effective_delta2(&[0.0], 0.4, 0.8).unwrap() - 0.8).abs() < 1e-15);
        assert!((effective_delta2(&[0.5], 0.4, 0.8).unwrap() - 0.6).abs() < 1e-15);
        assert!(effective_delta2(&[], 0.4, 0.8).is_err());
    }

    #[test]
    fn eight_agent_two_cluster_topology_validates() {
        let top = Topology::complete(8, vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7]], 5).unwrap();
        let w = build_predicting_matrix(&top).unwrap();
        let wt = build_clipping_matrix(&top).unwrap();
        assert!(check_mixing_invariants(&w, &top).is_none());
        assert!(check_mixing_invariants(&wt, &top).is_none());
        let spec = SpectralInfo::compute(&w, &wt).unwrap();
        assert!((spec.e2 - 0.5).abs() < 1e-10);
        // Clipped graph has two components: repeated unit eigenvalue.
        assert!((spec.e2_tilde - 1.0).abs() < 1e-10);
        // With any predicting weight the combination still contracts.
        assert!(spec.delta2(&[1.0]).unwrap() < 1.0);
    }

    #[test]
    fn user_matrix_validated_never_repaired() {
        let top = Topology::new(2, &[(0, 1)], one_cluster(2), 1).unwrap();
        // Valid doubly stochastic positive definite matrix: accepted as-is.
        let ok = validate_user_matrix(&top, &[vec![0.75, 0.25], vec![0.25, 0.75]]);
        assert!(ok.is_ok());
        assert!(!ok.unwrap().lazied);
        // Plain averaging has a zero eigenvalue: rejected, not lazied.
        let bad = validate_user_matrix(&top, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(matches!(bad, Err(TopologyError::UserMatrixInvalid(_))));
    }
}
