//! Synthetic environments with controlled step/reset-time distributions.
//!
//! Simulated work is a calibrated busy loop against the monotonic clock,
//! not a sleep, so it consumes CPU like a real environment and cannot be
//! flattered by oversubscription.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, AgentObs, AgentResult, Env};
use crate::error::{Error, Result};
use crate::space::{ElemKind, SpaceNode, StructValue};

/// Busy-spin for the given duration.
pub fn spin_for(d: Duration) {
    if d.is_zero() {
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

/// Workload shape of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnvProfile {
    pub name: String,
    /// Observation is a `Box([obs_bytes], uint8)`.
    pub obs_bytes: usize,
    /// Action space is `Discrete(n_actions)`.
    pub n_actions: u32,
    /// Step delay is drawn from a normal clamped at zero.
    pub step_time_mean_us: f64,
    pub step_time_std_us: f64,
    pub reset_time_us: f64,
    pub episode_length: u64,
    #[serde(default = "one")]
    pub max_agents: usize,
}

fn one() -> usize {
    1
}

impl SyntheticEnvProfile {
    pub fn validate(&self) -> Result<()> {
        if self.obs_bytes < 1 {
            return Err(Error::ConfigInvalid("obs_bytes must be >= 1".to_string()));
        }
        if self.n_actions < 1 {
            return Err(Error::ConfigInvalid("n_actions must be >= 1".to_string()));
        }
        if self.step_time_mean_us < 0.0
            || self.step_time_std_us < 0.0
            || self.reset_time_us < 0.0
        {
            return Err(Error::ConfigInvalid(
                "simulated times must be non-negative".to_string(),
            ));
        }
        if self.episode_length < 1 {
            return Err(Error::ConfigInvalid(
                "episode_length must be >= 1".to_string(),
            ));
        }
        if self.max_agents < 1 {
            return Err(Error::ConfigInvalid("max_agents must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Pure-overhead profile: zero simulated work.
    pub fn zero_work() -> Self {
        SyntheticEnvProfile {
            name: "zero_work".to_string(),
            obs_bytes: 32,
            n_actions: 4,
            step_time_mean_us: 0.0,
            step_time_std_us: 0.0,
            reset_time_us: 0.0,
            episode_length: 64,
            max_agents: 1,
        }
    }

    /// 1ms steps with a 20ms reset every 64 steps.
    pub fn slow_reset() -> Self {
        SyntheticEnvProfile {
            name: "slow_reset".to_string(),
            obs_bytes: 64,
            n_actions: 4,
            step_time_mean_us: 1_000.0,
            step_time_std_us: 0.0,
            reset_time_us: 20_000.0,
            episode_length: 64,
            max_agents: 1,
        }
    }

    /// Step-time standard deviation equal to the mean.
    pub fn heterogeneous() -> Self {
        SyntheticEnvProfile {
            name: "heterogeneous".to_string(),
            obs_bytes: 64,
            n_actions: 4,
            step_time_mean_us: 1_000.0,
            step_time_std_us: 1_000.0,
            reset_time_us: 20_000.0,
            episode_length: 64,
            max_agents: 1,
        }
    }
}

/// Deterministic counter-stamped environment that spins for its configured
/// delays. The observation's first 8 bytes carry a monotone step counter
/// (little-endian) that advances by exactly one per step across episode
/// boundaries, feeding the exactly-once vectorization checks; bytes 8..16
/// carry the last reset seed.
pub struct SyntheticEnv {
    profile: SyntheticEnvProfile,
    delay_rng: ChaCha8Rng,
    construct_seed: u64,
    reset_seed: u64,
    counter: u64,
    episode_step: u64,
    current_episode_len: u64,
    phase_offset_pending: bool,
    last_reset_us: f64,
    first_step_of_episode: bool,
}

impl SyntheticEnv {
    pub fn new(profile: SyntheticEnvProfile, construct_seed: u64) -> Self {
        SyntheticEnv {
            delay_rng: ChaCha8Rng::seed_from_u64(construct_seed ^ 0x9e37_79b9_7f4a_7c15),
            construct_seed,
            reset_seed: 0,
            counter: 0,
            episode_step: 0,
            current_episode_len: profile.episode_length,
            phase_offset_pending: true,
            last_reset_us: 0.0,
            first_step_of_episode: false,
            profile,
        }
    }

    /// Read the step counter back out of a stamped observation row.
    pub fn read_counter(obs: &[u8]) -> u64 {
        let mut bytes = [0u8; 8];
        let n = obs.len().min(8);
        bytes[..n].copy_from_slice(&obs[..n]);
        u64::from_le_bytes(bytes)
    }

    fn obs(&self) -> StructValue {
        let mut bytes = vec![0u8; self.profile.obs_bytes];
        let counter = self.counter.to_le_bytes();
        let seed = self.reset_seed.to_le_bytes();
        let n = bytes.len().min(8);
        bytes[..n].copy_from_slice(&counter[..n]);
        if bytes.len() > 8 {
            let n = (bytes.len() - 8).min(8);
            bytes[8..8 + n].copy_from_slice(&seed[..n]);
        }
        for (i, b) in bytes.iter_mut().enumerate().skip(16) {
            *b = (self.counter as usize).wrapping_add(i).wrapping_mul(31) as u8;
        }
        StructValue::u8s(bytes)
    }

    fn draw_step_delay(&mut self) -> Duration {
        let p = &self.profile;
        if p.step_time_mean_us <= 0.0 && p.step_time_std_us <= 0.0 {
            return Duration::ZERO;
        }
        let us = if p.step_time_std_us > 0.0 {
            let normal = Normal::new(p.step_time_mean_us, p.step_time_std_us)
                .expect("validated std");
            normal.sample(&mut self.delay_rng).max(0.0)
        } else {
            p.step_time_mean_us
        };
        Duration::from_secs_f64(us / 1e6)
    }

    fn results_for_agents(&self, reward: f32, terminal: bool, truncation: bool, info: Vec<(String, f64)>) -> Vec<AgentResult> {
        (0..self.profile.max_agents as AgentId)
            .map(|id| {
                let mut r = AgentResult::new(id, self.obs(), reward).done(terminal, truncation);
                r.info = info.clone();
                r
            })
            .collect()
    }
}

impl Env for SyntheticEnv {
    fn observation_space(&self) -> SpaceNode {
        SpaceNode::boxed(vec![self.profile.obs_bytes], ElemKind::U8, 0.0, 255.0)
    }

    fn action_space(&self) -> SpaceNode {
        SpaceNode::discrete(self.profile.n_actions)
    }

    fn max_agents(&self) -> usize {
        self.profile.max_agents
    }

    fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
        let start = Instant::now();
        spin_for(Duration::from_secs_f64(self.profile.reset_time_us / 1e6));
        self.last_reset_us = start.elapsed().as_secs_f64() * 1e6;
        self.reset_seed = seed;
        self.episode_step = 0;
        self.first_step_of_episode = true;
        // The first episode after construction is phase-staggered by the
        // construction seed so resets across a pool do not synchronize.
        self.current_episode_len = if self.phase_offset_pending {
            self.phase_offset_pending = false;
            1 + self.construct_seed % self.profile.episode_length
        } else {
            self.profile.episode_length
        };
        (0..self.profile.max_agents as AgentId)
            .map(|id| AgentObs::new(id, self.obs()))
            .collect()
    }

    fn step(&mut self, _actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
        let delay = self.draw_step_delay();
        let start = Instant::now();
        spin_for(delay);
        let spent_us = start.elapsed().as_secs_f64() * 1e6;

        self.counter += 1;
        self.episode_step += 1;
        let terminal = self.episode_step >= self.current_episode_len;
        let reward = (self.counter % 13) as f32 * 0.25 - 1.5;

        let mut info = vec![
            ("step_us".to_string(), spent_us),
            ("step_us_sq".to_string(), spent_us * spent_us),
        ];
        if self.first_step_of_episode {
            info.push(("reset_us".to_string(), self.last_reset_us));
            self.first_step_of_episode = false;
        }
        self.results_for_agents(reward, terminal, false, info)
    }
}

/// Factory for a profile, for use with the vectorization layer.
pub fn synthetic_factory(profile: SyntheticEnvProfile) -> crate::env::EnvFactory {
    crate::env::factory(move |seed| Box::new(SyntheticEnv::new(profile.clone(), seed)))
}
