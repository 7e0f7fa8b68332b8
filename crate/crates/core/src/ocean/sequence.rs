//! Sequence diagnostics: Password (reward latching), Stochastic
//! (nonuniform stochastic optimum), Memory (recall after a delay).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{f32_slice, OceanEnv, Policy};
use crate::env::{AgentId, AgentObs, AgentResult, Env};
use crate::space::{ElemKind, SpaceNode, StructValue};

fn two_f32(a: f32, b: f32) -> StructValue {
    StructValue::f32s(vec![a, b])
}

/// Guess a static binary string. The string is revealed one bit per step
/// during a prefix phase (observation `[1, bit]`), then the agent emits one
/// bit per step (observation `[0, 0]`). The terminal reward is 1 iff every
/// emitted bit matches — all or nothing.
pub struct Password {
    length: usize,
    bits: Vec<i64>,
    step: usize,
    correct: usize,
}

impl Password {
    pub fn new(length: usize) -> Self {
        Password {
            length,
            bits: Vec::new(),
            step: 0,
            correct: 0,
        }
    }

    fn obs(&self) -> StructValue {
        if self.step < self.length {
            two_f32(1.0, self.bits[self.step] as f32)
        } else {
            two_f32(0.0, 0.0)
        }
    }
}

impl Env for Password {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![2], ElemKind::F32, 0.0, 1.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(2)
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.bits = (0..self.length).map(|_| rng.gen_range(0..2i64)).collect();
        self.step = 0;
        self.correct = 0;
        vec![AgentObs::new(0, self.obs())]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        let action = actions[0].1.as_int().unwrap_or(0);
        if self.step >= self.length {
            // Emit phase: the k-th emit step guesses bit k.
            let k = self.step - self.length;
            if action == self.bits[k] {
                self.correct += 1;
            }
        }
        self.step += 1;
        let done = self.step >= 2 * self.length;
        let reward = if done && self.correct == self.length {
            1.0
        } else {
            0.0
        };
        vec![AgentResult::new(0, self.obs(), reward).done(done, false)]
    }
}

impl OceanEnv for Password {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return
    }
}

/// Buffers the revealed bits, then replays them.
pub struct PasswordOracle {
    length: usize,
    buffer: Vec<i64>,
    emitted: usize,
}

impl PasswordOracle {
    pub fn new(length: usize) -> Self {
        PasswordOracle {
            length,
            buffer: Vec::new(),
            emitted: 0,
        }
    }
}

impl Policy for PasswordOracle {
    fn begin_episode(&mut self) {
        self.buffer.clear();
        self.emitted = 0;
    }

    fn act(&mut self, _agent: AgentId, obs: &StructValue) -> StructValue {
        let o = f32_slice(obs);
        if o[0] > 0.5 && self.buffer.len() < self.length {
            self.buffer.push(o[1].round() as i64);
            StructValue::Int(0)
        } else {
            let bit = self.buffer.get(self.emitted).copied().unwrap_or(0);
            self.emitted += 1;
            StructValue::Int(bit)
        }
    }
}

/// The optimum is to play action 0 a `p` fraction of the time. The terminal
/// reward is `1 - |f0 - p|` where `f0` is the realized frequency of action
/// 0 over the horizon.
pub struct Stochastic {
    p: f64,
    horizon: usize,
    step: usize,
    zeros: usize,
}

impl Stochastic {
    pub fn new(p: f64, horizon: usize) -> Self {
        Stochastic {
            p,
            horizon,
            step: 0,
            zeros: 0,
        }
    }

    fn obs(&self) -> StructValue {
        StructValue::f32s(vec![self.step as f32 / self.horizon as f32])
    }
}

impl Env for Stochastic {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![1], ElemKind::F32, 0.0, 1.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(2)
    }

    fn reset(&mut self, _seed: u64) -> Vec<AgentObs> {
        self.step = 0;
        self.zeros = 0;
        vec![AgentObs::new(0, self.obs())]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        if actions[0].1.as_int().unwrap_or(0) == 0 {
            self.zeros += 1;
        }
        self.step += 1;
        let done = self.step >= self.horizon;
        let reward = if done {
            let f0 = self.zeros as f64 / self.horizon as f64;
            (1.0 - (f0 - self.p).abs()) as f32
        } else {
            0.0
        };
        vec![AgentResult::new(0, self.obs(), reward).done(done, false)]
    }
}

impl OceanEnv for Stochastic {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return
    }
}

/// Plays action 0 exactly `round(p × horizon)` times, then action 1.
pub struct StochasticOracle {
    zeros_target: usize,
    step: usize,
}

impl StochasticOracle {
    pub fn new(p: f64, horizon: usize) -> Self {
        StochasticOracle {
            zeros_target: (p * horizon as f64).round() as usize,
            step: 0,
        }
    }
}

impl Policy for StochasticOracle {
    fn begin_episode(&mut self) {
        self.step = 0;
    }

    fn act(&mut self, _agent: AgentId, _obs: &StructValue) -> StructValue {
        let a = if self.step < self.zeros_target { 0 } else { 1 };
        self.step += 1;
        StructValue::Int(a)
    }
}

/// Repeat the observed sequence after a delay. Digits are shown one per
/// step (observation `[1, digit]`), followed by a string of zero
/// observations for `delay` steps, then the agent re-emits the sequence
/// during the zero phase. Each correct recall step earns reward 1; the
/// score is the fraction of correct digits.
pub struct Memory {
    seq_len: usize,
    delay: usize,
    digits: Vec<i64>,
    step: usize,
}

impl Memory {
    pub fn new(seq_len: usize, delay: usize) -> Self {
        Memory {
            seq_len,
            delay,
            digits: Vec::new(),
            step: 0,
        }
    }

    fn obs(&self) -> StructValue {
        if self.step < self.seq_len {
            two_f32(1.0, self.digits[self.step] as f32)
        } else {
            two_f32(0.0, 0.0)
        }
    }

    fn total_steps(&self) -> usize {
        2 * self.seq_len + self.delay
    }
}

impl Env for Memory {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![2], ElemKind::F32, 0.0, 1.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(2)
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.digits = (0..self.seq_len).map(|_| rng.gen_range(0..2i64)).collect();
        self.step = 0;
        vec![AgentObs::new(0, self.obs())]
    }

    fn step(&mut self, actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        let action = actions[0].1.as_int().unwrap_or(0);
        let recall_start = self.seq_len + self.delay;
        let mut reward = 0.0;
        if self.step >= recall_start {
            let k = self.step - recall_start;
            if action == self.digits[k] {
                reward = 1.0;
            }
        }
        self.step += 1;
        let done = self.step >= self.total_steps();
        vec![AgentResult::new(0, self.obs(), reward).done(done, false)]
    }
}

impl OceanEnv for Memory {
    fn normalize_score(&self, episode_return: f64, _episode_len: u64) -> f64 {
        episode_return / self.seq_len as f64
    }
}

/// Buffers presented digits and replays them at the recall offset.
pub struct MemoryOracle {
    seq_len: usize,
    delay: usize,
    buffer: Vec<i64>,
    step: usize,
}

impl MemoryOracle {
    pub fn new(seq_len: usize, delay: usize) -> Self {
        MemoryOracle {
            seq_len,
            delay,
            buffer: Vec::new(),
            step: 0,
        }
    }
}

impl Policy for MemoryOracle {
    fn begin_episode(&mut self) {
        self.buffer.clear();
        self.step = 0;
    }

    fn act(&mut self, _agent: AgentId, obs: &StructValue) -> StructValue {
        let o = f32_slice(obs);
        if o[0] > 0.5 && self.buffer.len() < self.seq_len {
            self.buffer.push(o[1].round() as i64);
        }
        let recall_start = self.seq_len + self.delay;
        let a = if self.step >= recall_start {
            self.buffer
                .get(self.step - recall_start)
                .copied()
                .unwrap_or(0)
        } else {
            0
        };
        self.step += 1;
        StructValue::Int(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_episode(
        env: &mut dyn OceanEnv,
        policy: &mut dyn Policy,
        seed: u64,
    ) -> (f64, u64) {
        policy.begin_episode();
        let mut obs = env.reset(seed).pop().unwrap().obs;
        let mut ret = 0.0;
        let mut len = 0;
        loop {
            let a = policy.act(0, &obs);
            let r = env.step(&[(0, a)]).pop().unwrap();
            ret += r.reward as f64;
            len += 1;
            if r.terminal || r.truncation {
                return (ret, len);
            }
            obs = r.obs;
        }
    }

    #[test]
    fn password_oracle_recovers_the_string() {
        let mut env = Password::new(4);
        let mut oracle = PasswordOracle::new(4);
        for seed in 0..20 {
            let (ret, len) = run_episode(&mut env, &mut oracle, seed);
            assert_eq!(ret, 1.0);
            assert_eq!(len, 8);
        }
    }

    #[test]
    fn password_is_all_or_nothing() {
        // A policy that flips the last bit scores exactly 0.
        struct OffByOne(PasswordOracle, usize);
        impl Policy for OffByOne {
            fn begin_episode(&mut self) {
                self.0.begin_episode();
                self.1 = 0;
            }
            fn act(&mut self, agent: AgentId, obs: &StructValue) -> StructValue {
                let a = self.0.act(agent, obs);
                self.1 += 1;
                if self.1 == 8 {
                    StructValue::Int(1 - a.as_int().unwrap())
                } else {
                    a
                }
            }
        }
        let mut env = Password::new(4);
        let mut p = OffByOne(PasswordOracle::new(4), 0);
        let (ret, _) = run_episode(&mut env, &mut p, 3);
        assert_eq!(ret, 0.0);
    }

    #[test]
    fn stochastic_oracle_matches_frequency_exactly() {
        let mut env = Stochastic::new(0.7, 100);
        let mut oracle = StochasticOracle::new(0.7, 100);
        let (ret, len) = run_episode(&mut env, &mut oracle, 0);
        assert_eq!(len, 100);
        assert!((ret - 1.0).abs() < 1e-9, "|70/100 - 0.7| must be 0");
    }

    #[test]
    fn memory_oracle_recalls_full_sequence() {
        let mut env = Memory::new(6, 3);
        let mut oracle = MemoryOracle::new(6, 3);
        for seed in 0..20 {
            let (ret, len) = run_episode(&mut env, &mut oracle, seed);
            assert_eq!(ret, 6.0);
            assert_eq!(len, 15);
        }
    }

    #[test]
    fn memory_scores_fraction_correct() {
        let env = Memory::new(8, 2);
        assert_eq!(env.normalize_score(4.0, 18), 0.5);
    }
}
