//! Emulation: wrap any [`Env`] so it externally presents flat observation
//! buffers, a single multidiscrete action vector, a fixed agent count with
//! zero-padded rows, canonical ascending agent order, and startup-time shape
//! checks. After wrapping, every environment looks the same to the
//! vectorization layer no matter how nested or multiagent it is inside.

use std::collections::BTreeMap;

use crate::env::{AgentId, Env};
use crate::error::{Error, Result};
use crate::space::{
    conforms, flatten_into, infer_layout, ActionCodec, FlatLayout, MultiDiscreteSpec, SpaceNode,
    StructValue,
};

/// Per-episode aggregate of numeric info keys. Values are means over the
/// steps where the key was present; `episode_length` and `episode_return`
/// are always included.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub values: BTreeMap<String, f64>,
}

impl EpisodeStats {
    pub fn episode_length(&self) -> f64 {
        self.values.get("episode_length").copied().unwrap_or(0.0)
    }

    pub fn episode_return(&self) -> f64 {
        self.values.get("episode_return").copied().unwrap_or(0.0)
    }
}

/// Streaming aggregator over per-step infos.
///
/// Empty info maps contribute nothing. Non-finite values are dropped and
/// counted. One aggregate is emitted per episode, on the step where the
/// episode ends.
#[derive(Debug, Default)]
pub struct InfoAggregator {
    sums: BTreeMap<String, (f64, u64)>,
    steps: u64,
    ret: f64,
    dropped_non_finite: u64,
}

impl InfoAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one info map (may be empty).
    pub fn add_infos<'a, I>(&mut self, infos: I)
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        for (k, v) in infos {
            if !v.is_finite() {
                self.dropped_non_finite += 1;
                continue;
            }
            let e = self.sums.entry(k.to_string()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }

    /// Count one environment step and its total reward.
    pub fn count_step(&mut self, reward_total: f64) {
        self.steps += 1;
        self.ret += reward_total;
    }

    /// Close the episode: emit the aggregate and reset the accumulators.
    pub fn finish_episode(&mut self) -> EpisodeStats {
        let mut values = BTreeMap::new();
        for (k, (sum, count)) in std::mem::take(&mut self.sums) {
            if count > 0 {
                values.insert(k, sum / count as f64);
            }
        }
        values.insert("episode_length".to_string(), self.steps as f64);
        values.insert("episode_return".to_string(), self.ret);
        self.steps = 0;
        self.ret = 0.0;
        EpisodeStats { values }
    }

    /// Count of non-finite values dropped so far (the "counted warning").
    pub fn dropped_non_finite(&self) -> u64 {
        self.dropped_non_finite
    }
}

/// Owned result of one emulated reset or step.
///
/// All rows are fixed-size: `max_agents` rows regardless of how many agents
/// are live. Padded rows are zero-filled with reward 0 and all flags false;
/// live rows appear in ascending agent id order.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// `max_agents × total_bytes` packed little-endian observation block.
    pub obs: Vec<u8>,
    pub rewards: Vec<f32>,
    pub terminals: Vec<bool>,
    pub truncations: Vec<bool>,
    /// True iff the row holds a live agent.
    pub mask: Vec<bool>,
    /// Episode aggregates completed on this step (at most one).
    pub infos: Vec<EpisodeStats>,
}

/// Borrowed output rows for writing a step result directly into shared
/// memory. Flag rows use one byte per agent (0 or 1).
pub struct StepBuffers<'a> {
    pub obs: &'a mut [u8],
    pub rewards: &'a mut [f32],
    pub terminals: &'a mut [u8],
    pub truncations: &'a mut [u8],
    pub masks: &'a mut [u8],
}

/// An environment wrapped for flat, fixed-size IO.
pub struct EmulatedEnv<E: Env> {
    inner: E,
    obs_space: SpaceNode,
    obs_layout: FlatLayout,
    action_codec: ActionCodec,
    max_agents: usize,
    /// First-step validation latch: full conformance checks run only while
    /// unset, so steady-state steps pay nothing for them.
    checked: bool,
    /// Agents owed actions: the non-terminal agents of the last emission.
    actors: Vec<AgentId>,
    next_seed: u64,
    aggregator: InfoAggregator,
    did_reset: bool,
}

/// Wrap an environment, inferring its flat observation layout and
/// multidiscrete action spec once for the wrapper's lifetime.
pub fn wrap<E: Env>(env: E) -> Result<EmulatedEnv<E>> {
    let obs_space = env.observation_space();
    let obs_layout = infer_layout(&obs_space)?;
    let action_codec = ActionCodec::new(env.action_space())?;
    let max_agents = env.max_agents();
    if max_agents == 0 {
        return Err(Error::InvalidSpace("max_agents must be >= 1".to_string()));
    }
    Ok(EmulatedEnv {
        inner: env,
        obs_space,
        obs_layout,
        action_codec,
        max_agents,
        checked: false,
        actors: Vec::new(),
        next_seed: 0,
        aggregator: InfoAggregator::new(),
        did_reset: false,
    })
}

impl<E: Env> EmulatedEnv<E> {
    pub fn obs_layout(&self) -> &FlatLayout {
        &self.obs_layout
    }

    pub fn obs_space(&self) -> &SpaceNode {
        &self.obs_space
    }

    pub fn action_spec(&self) -> &MultiDiscreteSpec {
        self.action_codec.spec()
    }

    pub fn max_agents(&self) -> usize {
        self.max_agents
    }

    /// Bytes in one emitted observation block.
    pub fn obs_block_bytes(&self) -> usize {
        self.max_agents * self.obs_layout.total_bytes
    }

    /// Flat action components per agent row.
    pub fn action_components(&self) -> usize {
        self.action_codec.spec().num_components()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Reset into owned buffers.
    pub fn reset(&mut self, seed: u64) -> Result<StepResult> {
        let mut out = self.empty_result();
        let infos = self.reset_into(seed, buffers_of(&mut out))?;
        out.infos = infos;
        Ok(out)
    }

    /// Step into owned buffers.
    pub fn step(&mut self, flat_actions: &[i32]) -> Result<StepResult> {
        let mut out = self.empty_result();
        let infos = self.step_into(flat_actions, buffers_of(&mut out))?;
        out.infos = infos;
        Ok(out)
    }

    fn empty_result(&self) -> StepResult {
        StepResult {
            obs: vec![0u8; self.obs_block_bytes()],
            rewards: vec![0.0; self.max_agents],
            terminals: vec![false; self.max_agents],
            truncations: vec![false; self.max_agents],
            mask: vec![false; self.max_agents],
            infos: Vec::new(),
        }
    }

    /// Reset, writing rows into caller-provided buffers.
    ///
    /// Every observation is conformance-validated on reset: this is the
    /// "first batch" where nearly all user errors surface.
    pub fn reset_into(&mut self, seed: u64, out: StepBuffers<'_>) -> Result<Vec<EpisodeStats>> {
        let mut agents = self.inner.reset(seed);
        self.next_seed = seed.wrapping_add(1);
        self.did_reset = true;
        self.aggregator = InfoAggregator::new();
        agents.sort_by_key(|a| a.agent);
        if agents.len() > self.max_agents {
            return Err(Error::AgentOverflow {
                got: agents.len(),
                max: self.max_agents,
            });
        }
        for a in &agents {
            self.validate_obs(a.agent, &a.obs)?;
            self.aggregator.add_infos(a.info.iter().map(|(k, v)| (k.as_str(), *v)));
        }

        let row = self.obs_layout.total_bytes;
        out.obs.fill(0);
        out.rewards.fill(0.0);
        out.terminals.fill(0);
        out.truncations.fill(0);
        out.masks.fill(0);
        for (i, a) in agents.iter().enumerate() {
            flatten_into(
                &a.obs,
                &self.obs_space,
                &self.obs_layout,
                &mut out.obs[i * row..(i + 1) * row],
            )?;
            out.masks[i] = 1;
        }
        self.actors = agents.iter().map(|a| a.agent).collect();
        Ok(Vec::new())
    }

    /// Step, writing rows into caller-provided buffers.
    ///
    /// `flat_actions` is a `max_agents × num_components` i32 matrix; rows
    /// beyond the live agents of the previous emission are ignored. Action
    /// bounds are checked every step (it is O(components) and prevents
    /// memory-unsafe decodes); full conformance validation runs only until
    /// the first step completes.
    ///
    /// When every live agent is terminal or truncated, the wrapper resets
    /// the inner environment with the next seed in sequence and the emitted
    /// observation block is the first observation of the next episode, with
    /// the terminal flags marking the boundary. The true final observation
    /// is discarded.
    pub fn step_into(
        &mut self,
        flat_actions: &[i32],
        out: StepBuffers<'_>,
    ) -> Result<Vec<EpisodeStats>> {
        if !self.did_reset {
            return Err(Error::ProtocolViolation(
                "step before reset".to_string(),
            ));
        }
        let comps = self.action_components();
        let expected = self.max_agents * comps;
        if flat_actions.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: flat_actions.len(),
            });
        }

        let mut actions = Vec::with_capacity(self.actors.len());
        for (row, agent) in self.actors.iter().enumerate() {
            let slice = &flat_actions[row * comps..(row + 1) * comps];
            let decoded = self.action_codec.decode(slice).map_err(|e| match e {
                Error::ActionOutOfRange {
                    component,
                    value,
                    bound,
                    ..
                } => Error::ActionOutOfRange {
                    row,
                    component,
                    value,
                    bound,
                },
                other => other,
            })?;
            actions.push((*agent, decoded));
        }

        let mut results = self.inner.step(&actions);
        results.sort_by_key(|r| r.agent);
        if results.len() > self.max_agents {
            return Err(Error::AgentOverflow {
                got: results.len(),
                max: self.max_agents,
            });
        }

        let mut reward_total = 0.0f64;
        for r in &results {
            if !self.checked {
                self.validate_obs(r.agent, &r.obs)?;
            }
            self.aggregator.add_infos(r.info.iter().map(|(k, v)| (k.as_str(), *v)));
            reward_total += r.reward as f64;
        }
        self.aggregator.count_step(reward_total);

        let row = self.obs_layout.total_bytes;
        out.obs.fill(0);
        out.rewards.fill(0.0);
        out.terminals.fill(0);
        out.truncations.fill(0);
        out.masks.fill(0);
        for (i, r) in results.iter().enumerate() {
            out.rewards[i] = r.reward;
            out.terminals[i] = r.terminal as u8;
            out.truncations[i] = r.truncation as u8;
        }

        let episode_over =
            !results.is_empty() && results.iter().all(|r| r.terminal || r.truncation);
        let mut infos = Vec::new();
        if episode_over {
            infos.push(self.aggregator.finish_episode());
            let seed = self.next_seed;
            let mut agents = self.inner.reset(seed);
            self.next_seed = seed.wrapping_add(1);
            agents.sort_by_key(|a| a.agent);
            if agents.len() > self.max_agents {
                return Err(Error::AgentOverflow {
                    got: agents.len(),
                    max: self.max_agents,
                });
            }
            for a in &agents {
                if !self.checked {
                    self.validate_obs(a.agent, &a.obs)?;
                }
                self.aggregator.add_infos(a.info.iter().map(|(k, v)| (k.as_str(), *v)));
            }
            for (i, a) in agents.iter().enumerate() {
                flatten_into(
                    &a.obs,
                    &self.obs_space,
                    &self.obs_layout,
                    &mut out.obs[i * row..(i + 1) * row],
                )?;
                out.masks[i] = 1;
            }
            self.actors = agents.iter().map(|a| a.agent).collect();
        } else {
            for (i, r) in results.iter().enumerate() {
                flatten_into(
                    &r.obs,
                    &self.obs_space,
                    &self.obs_layout,
                    &mut out.obs[i * row..(i + 1) * row],
                )?;
                out.masks[i] = 1;
            }
            // Dead agents received their last reward this step; from the
            // next step on their rows are padding.
            self.actors = results
                .iter()
                .filter(|r| !r.terminal && !r.truncation)
                .map(|r| r.agent)
                .collect();
        }
        self.checked = true;
        Ok(infos)
    }

    fn validate_obs(&self, agent: AgentId, obs: &StructValue) -> Result<()> {
        conforms(obs, &self.obs_space).map_err(|e| match e {
            Error::ShapeMismatch { path, detail } => Error::ShapeCheckFailed {
                agent,
                path,
                detail,
            },
            other => other,
        })
    }
}

fn buffers_of(out: &mut StepResult) -> StepBuffers<'_> {
    // Owned results use bool rows; the shared-memory path uses raw bytes.
    // Bridge through a scratch representation only for the flag rows.
    unsafe {
        StepBuffers {
            obs: &mut out.obs,
            rewards: &mut out.rewards,
            terminals: bools_as_bytes(&mut out.terminals),
            truncations: bools_as_bytes(&mut out.truncations),
            masks: bools_as_bytes(&mut out.mask),
        }
    }
}

// bool is guaranteed to have size 1 and values 0/1; writing 0/1 bytes keeps
// every element valid.
unsafe fn bools_as_bytes(v: &mut [bool]) -> &mut [u8] {
    std::slice::from_raw_parts_mut(v.as_mut_ptr().cast::<u8>(), v.len())
}
