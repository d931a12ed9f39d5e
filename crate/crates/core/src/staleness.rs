//! Per-agent state history and delayed neighbor views.
//!
//! Reliable neighbors (same cluster) are served at the current iteration t;
//! unreliable neighbors are served at max(t - tau, 0). Before tau iterations
//! have elapsed the initial state stands in for the stale state, so
//! iteration 0 is well-defined for every algorithm and all warm-up
//! displacement terms vanish.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum StalenessError {
    #[error("agent {0} unknown (history tracks {1} agents)")]
    UnknownAgent(usize, usize),
    #[error("out-of-order insert for agent {agent}: got t={got}, expected t={want}")]
    OutOfOrder { agent: usize, got: usize, want: usize },
    #[error("future state: agent {agent} queried at t={t} but latest recorded is {latest}")]
    FutureState { agent: usize, t: usize, latest: usize },
    #[error("state evicted: agent {agent} at t={t} is older than the retention window")]
    Evicted { agent: usize, t: usize },
    #[error("no states recorded yet for agent {0}")]
    Empty(usize),
}

/// Ring buffers of (iteration, state) per agent with retention depth tau+1:
/// enough to serve the current state, the stale state at t - tau, and the
/// full self-trajectory between them.
#[derive(Debug, Clone)]
pub struct StateHistory {
    tau: usize,
    buffers: Vec<VecDeque<(usize, Vec<f64>)>>,
}

impl StateHistory {
    pub fn new(n_agents: usize, tau: usize) -> Self {
        Self {
            tau,
            buffers: vec![VecDeque::with_capacity(tau + 2); n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.buffers.len()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    fn buffer(&self, agent: usize) -> Result<&VecDeque<(usize, Vec<f64>)>, StalenessError> {
        self.buffers
            .get(agent)
            .ok_or(StalenessError::UnknownAgent(agent, self.buffers.len()))
    }

    /// Append agent state for iteration t; t must be 0 (first) or follow the
    /// last recorded iteration. States older than the retention window are
    /// evicted.
    pub fn record(&mut self, agent: usize, t: usize, x: Vec<f64>) -> Result<(), StalenessError> {
        let n = self.buffers.len();
        let buf = self
            .buffers
            .get_mut(agent)
            .ok_or(StalenessError::UnknownAgent(agent, n))?;
        let want = match buf.back() {
            Some(&(last, _)) => last + 1,
            None => 0,
        };
        if t != want {
            return Err(StalenessError::OutOfOrder { agent, got: t, want });
        }
        buf.push_back((t, x));
        while buf.len() > self.tau + 1 {
            buf.pop_front();
        }
        Ok(())
    }

    /// The state recorded for (agent, t), if still retained.
    pub fn get(&self, agent: usize, t: usize) -> Result<&[f64], StalenessError> {
        let buf = self.buffer(agent)?;
        let &(latest, _) = buf.back().ok_or(StalenessError::Empty(agent))?;
        if t > latest {
            return Err(StalenessError::FutureState { agent, t, latest });
        }
        let &(oldest, _) = buf.front().expect("nonempty");
        if t < oldest {
            return Err(StalenessError::Evicted { agent, t });
        }
        Ok(&buf[t - oldest].1)
    }
}

/// What agent i can see at iteration t: current states of reliable
/// neighbors, stale states of unreliable neighbors, and its own recent
/// trajectory for the compensation displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView {
    pub agent_id: usize,
    pub t: usize,
    /// j -> x^j_t for reliable neighbors j (same cluster, adjacent); never
    /// contains the agent itself.
    pub reliable_states: BTreeMap<usize, Vec<f64>>,
    /// k -> x^k_{max(t - tau, 0)} for unreliable neighbors k.
    pub unreliable_states: BTreeMap<usize, Vec<f64>>,
    /// x^i_t.
    pub self_current: Vec<f64>,
    /// Exactly tau entries [x^i_{max(t - tau + r, 0)}] for r = 0..tau-1;
    /// during warm-up the clamp repeats the initial state, so every
    /// displacement against entry 0 is exactly zero.
    pub self_trajectory: Vec<Vec<f64>>,
}

/// Assemble agent i's view of iteration t from recorded history.
pub fn view(
    history: &StateHistory,
    topology: &Topology,
    agent: usize,
    t: usize,
) -> Result<NeighborView, StalenessError> {
    let tau = history.tau();
    let stale_t = t.saturating_sub(tau);
    let mut reliable_states = BTreeMap::new();
    for j in topology.reliable_neighbors(agent) {
        reliable_states.insert(j, history.get(j, t)?.to_vec());
    }
    let mut unreliable_states = BTreeMap::new();
    for k in topology.unreliable_neighbors(agent) {
        unreliable_states.insert(k, history.get(k, stale_t)?.to_vec());
    }
    let self_current = history.get(agent, t)?.to_vec();
    let mut self_trajectory = Vec::with_capacity(tau);
    for r in 0..tau {
        let tr = (stale_t + r).min(t);
        self_trajectory.push(history.get(agent, tr)?.to_vec());
    }
    Ok(NeighborView {
        agent_id: agent,
        t,
        reliable_states,
        unreliable_states,
        self_current,
        self_trajectory,
    })
}
