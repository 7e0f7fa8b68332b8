//! The sanity-environment suite: seven small environments, each diagnostic
//! of a specific implementation bug class, paired with scripted oracle
//! policies that stand in for trained agents. A correct stack scores > 0.9
//! with the oracle on every environment; these are sanity checks only and
//! never comparative baselines.

mod oneshot;
mod sequence;
mod squared;

pub use oneshot::{Bandit, Multiagent, Spaces};
pub use sequence::{Memory, Password, Stochastic};
pub use squared::Squared;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, Env};
use crate::error::{Error, Result};
use crate::space::{sample, SpaceNode, StructValue};

/// Environment names accepted by [`OceanEnvConfig::default_for`].
pub const ENV_NAMES: [&str; 7] = [
    "squared",
    "password",
    "stochastic",
    "memory",
    "multiagent",
    "spaces",
    "bandit",
];

/// Per-environment configuration, loadable from the same JSON format as
/// benchmark profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum OceanEnvConfig {
    /// Navigate to targets on the perimeter of a square grid.
    Squared { grid_size: usize, num_targets: usize },
    /// Emit a revealed static binary string from memory.
    Password { length: usize },
    /// Play action 0 a target fraction of the time.
    Stochastic { p: f64, horizon: usize },
    /// Repeat an observed digit sequence after a zero-cue delay.
    Memory { seq_len: usize, delay: usize },
    /// Agent 1 must pick action 0 and agent 2 action 1.
    Multiagent {},
    /// Hierarchical observation and action spaces; both subspaces matter.
    Spaces {},
    /// Classic multiarmed bandit, one pull per episode.
    Bandit { arm_probs: Vec<f64> },
}

impl OceanEnvConfig {
    /// Default configuration for a named environment.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "squared" => OceanEnvConfig::Squared {
                grid_size: 11,
                num_targets: 40,
            },
            "password" => OceanEnvConfig::Password { length: 8 },
            "stochastic" => OceanEnvConfig::Stochastic {
                p: 0.7,
                horizon: 100,
            },
            "memory" => OceanEnvConfig::Memory {
                seq_len: 8,
                delay: 4,
            },
            "multiagent" => OceanEnvConfig::Multiagent {},
            "spaces" => OceanEnvConfig::Spaces {},
            "bandit" => OceanEnvConfig::Bandit {
                arm_probs: vec![0.1, 0.5, 0.98],
            },
            other => return Err(Error::UnknownEnv(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OceanEnvConfig::Squared { .. } => "squared",
            OceanEnvConfig::Password { .. } => "password",
            OceanEnvConfig::Stochastic { .. } => "stochastic",
            OceanEnvConfig::Memory { .. } => "memory",
            OceanEnvConfig::Multiagent {} => "multiagent",
            OceanEnvConfig::Spaces {} => "spaces",
            OceanEnvConfig::Bandit { .. } => "bandit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        match self {
            OceanEnvConfig::Squared {
                grid_size,
                num_targets,
            } => {
                if *grid_size < 3 || grid_size % 2 == 0 {
                    return bad(format!("grid_size must be odd and >= 3 (got {grid_size})"));
                }
                let perimeter = 4 * (grid_size - 1);
                if *num_targets < 1 || *num_targets > perimeter {
                    return bad(format!(
                        "num_targets must be in [1, {perimeter}] (got {num_targets})"
                    ));
                }
            }
            OceanEnvConfig::Password { length } => {
                if *length < 1 {
                    return bad("password length must be >= 1".to_string());
                }
            }
            OceanEnvConfig::Stochastic { p, horizon } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return bad(format!("p must be in (0, 1) (got {p})"));
                }
                if *horizon < 1 {
                    return bad("horizon must be >= 1".to_string());
                }
            }
            OceanEnvConfig::Memory { seq_len, delay: _ } => {
                if *seq_len < 1 {
                    return bad("seq_len must be >= 1".to_string());
                }
            }
            OceanEnvConfig::Multiagent {} | OceanEnvConfig::Spaces {} => {}
            OceanEnvConfig::Bandit { arm_probs } => {
                if arm_probs.is_empty() {
                    return bad("bandit needs at least one arm".to_string());
                }
                if arm_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("arm probabilities must be in [0, 1]".to_string());
                }
            }
        }
        Ok(())
    }
}

/// An environment that can normalize its episode outcome to `[0, 1]`.
pub trait OceanEnv: Env {
    /// Map an episode's summed reward (and length) to a score in `[0, 1]`.
    fn normalize_score(&self, episode_return: f64, episode_len: u64) -> f64;
}

pub type BoxOceanEnv = Box<dyn OceanEnv>;

/// Instantiate an environment from its config.
pub fn make_ocean_env(cfg: &OceanEnvConfig) -> Result<BoxOceanEnv> {
    cfg.validate()?;
    Ok(match cfg.clone() {
        OceanEnvConfig::Squared {
            grid_size,
            num_targets,
        } => Box::new(Squared::new(grid_size, num_targets)),
        OceanEnvConfig::Password { length } => Box::new(Password::new(length)),
        OceanEnvConfig::Stochastic { p, horizon } => Box::new(Stochastic::new(p, horizon)),
        OceanEnvConfig::Memory { seq_len, delay } => Box::new(Memory::new(seq_len, delay)),
        OceanEnvConfig::Multiagent {} => Box::new(Multiagent::new()),
        OceanEnvConfig::Spaces {} => Box::new(Spaces::new()),
        OceanEnvConfig::Bandit { arm_probs } => Box::new(Bandit::new(arm_probs)),
    })
}

/// A policy maps per-agent observations to structured actions. Policies may
/// be stateful within an episode (buffering, counting).
pub trait Policy {
    /// Called once per episode before the first action.
    fn begin_episode(&mut self) {}

    fn act(&mut self, agent: AgentId, obs: &StructValue) -> StructValue;
}

/// The scripted optimum for a configured environment. Oracles may use
/// config parameters the agent could not observe (e.g. bandit arm
/// probabilities); they exist to verify environments, not to be fair.
pub fn oracle_policy(cfg: &OceanEnvConfig) -> Box<dyn Policy> {
    match cfg.clone() {
        OceanEnvConfig::Squared { grid_size, .. } => Box::new(squared::SquaredOracle::new(grid_size)),
        OceanEnvConfig::Password { length } => Box::new(sequence::PasswordOracle::new(length)),
        OceanEnvConfig::Stochastic { p, horizon } => {
            Box::new(sequence::StochasticOracle::new(p, horizon))
        }
        OceanEnvConfig::Memory { seq_len, delay } => {
            Box::new(sequence::MemoryOracle::new(seq_len, delay))
        }
        OceanEnvConfig::Multiagent {} => Box::new(oneshot::MultiagentOracle),
        OceanEnvConfig::Spaces {} => Box::new(oneshot::SpacesOracle),
        OceanEnvConfig::Bandit { arm_probs } => Box::new(oneshot::BanditOracle::new(&arm_probs)),
    }
}

/// Uniform random policy over an action space, seeded.
pub struct RandomPolicy {
    space: SpaceNode,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(space: SpaceNode, seed: u64) -> Self {
        RandomPolicy {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _agent: AgentId, _obs: &StructValue) -> StructValue {
        sample(&self.space, self.rng.gen()).expect("valid action space")
    }
}

/// Mean normalized episode score of `policy` over seeded episodes.
/// Deterministic given the seed.
pub fn evaluate_score(
    env: &mut dyn OceanEnv,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
) -> f64 {
    assert!(episodes >= 1);
    let mut total = 0.0;
    for ep in 0..episodes as u64 {
        policy.begin_episode();
        let mut live: Vec<(AgentId, StructValue)> = env
            .reset(seed.wrapping_add(ep))
            .into_iter()
            .map(|a| (a.agent, a.obs))
            .collect();
        live.sort_by_key(|(id, _)| *id);
        let mut episode_return = 0.0f64;
        let mut episode_len = 0u64;
        loop {
            let actions: Vec<(AgentId, StructValue)> = live
                .iter()
                .map(|(id, obs)| (*id, policy.act(*id, obs)))
                .collect();
            let results = env.step(&actions);
            episode_len += 1;
            episode_return += results.iter().map(|r| r.reward as f64).sum::<f64>();
            if results.iter().all(|r| r.terminal || r.truncation) {
                break;
            }
            live = results
                .into_iter()
                .filter(|r| !r.terminal && !r.truncation)
                .map(|r| (r.agent, r.obs))
                .collect();
            live.sort_by_key(|(id, _)| *id);
        }
        let score = env.normalize_score(episode_return, episode_len);
        debug_assert!((0.0..=1.0).contains(&score), "score {score} out of range");
        total += score.clamp(0.0, 1.0);
    }
    total / episodes as f64
}

pub(crate) fn f32_slice(v: &StructValue) -> &[f32] {
    match v {
        StructValue::Array(crate::space::ArrayValue::F32(data)) => data,
        _ => panic!("expected f32 box observation"),
    }
}
