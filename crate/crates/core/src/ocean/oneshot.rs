//! Single-step diagnostics: Multiagent (per-agent credit assignment),
//! Spaces (hierarchical observation/action handling), Bandit (stochastic
//! reward).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{f32_slice, OceanEnv, Policy};
use crate::env::{AgentId, AgentObs, AgentResult, Env};
use crate::space::{ElemKind, SpaceNode, StructValue};

/// Two agents, one step: agent 1 must pick action 0 and agent 2 action 1.
/// Each observes a one-hot identity vector.
pub struct Multiagent;

impl Multiagent {
    pub fn new() -> Self {
        Multiagent
    }

    fn obs(agent: AgentId) -> StructValue {
        let one = (agent == 1) as i32 as f32;
        StructValue::f32s(vec![one, 1.0 - one])
    }
}

impl Default for Multiagent {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Multiagent {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![2], ElemKind::F32, 0.0, 1.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(2)
    }

    fn max_agents(&self) -> usize {
        2
    }

    fn reset(&mut self, _seed: u64) -> Vec<AgentObs> {
        vec![
            AgentObs::new(1, Self::obs(1)),
            AgentObs::new(2, Self::obs(2)),
        ]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        actions
            .iter()
            .map(|&(agent, ref a)| {
                let want = (agent - 1) as i64;
                let reward = (a.as_int() == Some(want)) as i32 as f32;
                AgentResult::new(agent, Self::obs(agent), reward).done(true, false)
            })
            .collect()
    }
}

impl OceanEnv for Multiagent {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return / 2.0
    }
}

/// Reads the one-hot identity and plays the matching action.
pub struct MultiagentOracle;

impl Policy for MultiagentOracle {
    fn act(&mut self, _agent: AgentId, obs: &StructValue) -> StructValue {
        let o = f32_slice(obs);
        StructValue::Int(if o[0] > 0.5 { 0 } else { 1 })
    }
}

/// Hierarchical spaces: the observation is a map of an image patch and a
/// flat pair, the action a map of two binary choices. Reward 1 requires
/// matching both: `a` = parity of positive image cells, `b` = whether
/// `flat[0] > flat[1]`. Ignoring either subspace caps the expected score at
/// one half.
pub struct Spaces {
    image: Vec<f32>,
    flat: Vec<f32>,
}

impl Spaces {
    pub fn new() -> Self {
        Spaces {
            image: vec![0.0; 9],
            flat: vec![0.0; 2],
        }
    }

    fn obs(&self) -> StructValue {
        let mut m = BTreeMap::new();
        m.insert("flat".to_string(), StructValue::f32s(self.flat.clone()));
        m.insert("image".to_string(), StructValue::f32s(self.image.clone()));
        StructValue::Map(m)
    }

    fn targets(image: &[f32], flat: &[f32]) -> (i64, i64) {
        let positives = image.iter().filter(|&&v| v > 0.0).count();
        let a = (positives % 2) as i64;
        let b = (flat[0] > flat[1]) as i64;
        (a, b)
    }
}

impl Default for Spaces {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Spaces {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::map(vec![
            (
                "flat".to_string(),
                SpaceNode::boxed(vec![2], ElemKind::F32, 0.0, 1.0),
            ),
            (
                "image".to_string(),
                SpaceNode::boxed(vec![3, 3], ElemKind::F32, -1.0, 1.0),
            ),
        ])
        .expect("static keys")
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::map(vec![
            ("a".to_string(), SpaceNode::discrete(2)),
            ("b".to_string(), SpaceNode::discrete(2)),
        ])
        .expect("static keys")
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.image = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        self.flat = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
        vec![AgentObs::new(0, self.obs())]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        let (want_a, want_b) = Self::targets(&self.image, &self.flat);
        let got_a = actions[0].1.get("a").and_then(StructValue::as_int);
        let got_b = actions[0].1.get("b").and_then(StructValue::as_int);
        let reward = (got_a == Some(want_a) && got_b == Some(want_b)) as i32 as f32;
        vec![AgentResult::new(0, self.obs(), reward).done(true, false)]
    }
}

impl OceanEnv for Spaces {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return
    }
}

/// Computes both predicates from the observation.
pub struct SpacesOracle;

impl Policy for SpacesOracle {
    fn act(&mut self, _agent: AgentId, obs: &StructValue) -> StructValue {
        let image = f32_slice(obs.get("image").expect("image"));
        let flat = f32_slice(obs.get("flat").expect("flat"));
        let (a, b) = Spaces::targets(image, flat);
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), StructValue::Int(a));
        m.insert("b".to_string(), StructValue::Int(b));
        StructValue::Map(m)
    }
}

/// Classic multiarmed bandit: one pull per episode, arm `i` pays 1 with
/// probability `arm_probs[i]`.
pub struct Bandit {
    arm_probs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Bandit {
    pub fn new(arm_probs: Vec<f64>) -> Self {
        Bandit {
            arm_probs,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Env for Bandit {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![1], ElemKind::F32, 0.0, 1.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(self.arm_probs.len() as u32)
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        vec![AgentObs::new(0, StructValue::f32s(vec![0.0]))]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        let arm = actions[0].1.as_int().unwrap_or(0) as usize;
        let p = self.arm_probs.get(arm).copied().unwrap_or(0.0);
        let reward = (self.rng.gen_range(0.0..1.0) < p) as i32 as f32;
        vec![AgentResult::new(0, StructValue::f32s(vec![0.0]), reward).done(true, false)]
    }
}

impl OceanEnv for Bandit {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return
    }
}

/// Pulls the best arm; the probabilities are known to the oracle, not the
/// agent.
pub struct BanditOracle {
    best: i64,
}

impl BanditOracle {
    pub fn new(arm_probs: &[f64]) -> Self {
        let best = arm_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i as i64)
            .unwrap_or(0);
        BanditOracle { best }
    }
}

impl Policy for BanditOracle {
    fn act(&mut self, _agent: AgentId, _obs: &StructValue) -> StructValue {
        StructValue::Int(self.best)
    }
}
