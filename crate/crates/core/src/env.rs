//! The native environment contract.
//!
//! Environments are stateful objects driven by `reset`/`step`. They return
//! per-agent results keyed by agent id in any order; the emulation layer
//! sorts, pads, and flattens them. Multiagent environments may return fewer
//! agents than `max_agents` as agents die, but never more.

use crate::space::{SpaceNode, StructValue};

/// Totally ordered agent identifier.
pub type AgentId = u32;

/// Per-step scalar log values. Structured infos are out of scope by design;
/// everything on the fast path is a key → float pair.
pub type Info = Vec<(String, f64)>;

/// One agent's slice of a reset result.
#[derive(Debug, Clone)]
pub struct AgentObs {
    pub agent: AgentId,
    pub obs: StructValue,
    pub info: Info,
}

impl AgentObs {
    pub fn new(agent: AgentId, obs: StructValue) -> Self {
        AgentObs {
            agent,
            obs,
            info: Vec::new(),
        }
    }
}

/// One agent's slice of a step result.
#[derive(Debug, Clone)]
pub struct AgentResult {
    pub agent: AgentId,
    pub obs: StructValue,
    pub reward: f32,
    pub terminal: bool,
    pub truncation: bool,
    pub info: Info,
}

impl AgentResult {
    pub fn new(agent: AgentId, obs: StructValue, reward: f32) -> Self {
        AgentResult {
            agent,
            obs,
            reward,
            terminal: false,
            truncation: false,
            info: Vec::new(),
        }
    }

    pub fn done(mut self, terminal: bool, truncation: bool) -> Self {
        self.terminal = terminal;
        self.truncation = truncation;
        self
    }
}

/// The environment contract.
///
/// Implementations must return observations conforming to
/// `observation_space` and at most `max_agents` agents per call. A given
/// instance is used from one execution context at a time; distinct
/// instances are independent.
pub trait Env {
    fn observation_space(&self) -> SpaceNode;
    fn action_space(&self) -> SpaceNode;

    /// Fixed upper bound on simultaneously live agents.
    fn max_agents(&self) -> usize {
        1
    }

    /// Start a new episode. Deterministic for a given seed.
    fn reset(&mut self, seed: u64) -> Vec<AgentObs>;

    /// Advance one step. `actions` carries one structured action per agent
    /// owed one (the non-terminal agents of the previous return).
    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult>;
}

/// Boxed environment, as held by workers.
pub type BoxEnv = Box<dyn Env>;

impl Env for BoxEnv {
    fn observation_space(&self) -> SpaceNode {
        (**self).observation_space()
    }

    fn action_space(&self) -> SpaceNode {
        (**self).action_space()
    }

    fn max_agents(&self) -> usize {
        (**self).max_agents()
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        (**self).reset(seed)
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        (**self).step(actions)
    }
}

/// Factory handed to the vectorization layer; called once per environment
/// slot with that slot's construction seed.
pub type EnvFactory = std::sync::Arc<dyn Fn(u64) -> BoxEnv + Send + Sync>;

/// Convenience for building an [`EnvFactory`] from a closure.
pub fn factory<F>(f: F) -> EnvFactory
where
    F: Fn(u64) -> BoxEnv + Send + Sync + 'static,
{
    std::sync::Arc::new(f)
}
