//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the codec, emulation, and vectorization layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A space tree violates its structural invariants.
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    /// A value does not conform to its space (wrong shape, kind, or range).
    #[error("shape mismatch at {path}: {detail}")]
    ShapeMismatch { path: String, detail: String },

    /// A byte buffer has the wrong length for the layout it is decoded under.
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// A discrete component decoded outside [0, n) — a corruption signal.
    #[error("range error at {path}: value {value} outside [0, {bound})")]
    RangeError {
        path: String,
        value: i64,
        bound: i64,
    },

    /// The space cannot be used in this role (e.g. continuous action leaves).
    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),

    /// An action component is outside its multidiscrete bound.
    #[error("action out of range: row {row} component {component} value {value} not in [0, {bound})")]
    ActionOutOfRange {
        row: usize,
        component: usize,
        value: i32,
        bound: u32,
    },

    /// First-batch conformance validation failed for one agent's observation.
    #[error("shape check failed for agent {agent} at {path}: {detail}")]
    ShapeCheckFailed {
        agent: u32,
        path: String,
        detail: String,
    },

    /// An environment returned more agents than its declared maximum.
    #[error("agent overflow: environment returned {got} agents, max_agents is {max}")]
    AgentOverflow { got: usize, max: usize },

    /// A vectorization config violates its invariants.
    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    /// The send/recv discipline was violated by the caller.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// A worker died or the handle was closed.
    #[error("worker dead: {0}")]
    WorkerDead(String),

    /// A worker context could not be started.
    #[error("spawn failure: {0}")]
    SpawnFailure(String),

    /// No vectorization config satisfies the given tuning constraints.
    #[error("no valid config for the given constraints")]
    NoValidConfig,

    /// A timed measurement completed too few cycles to be meaningful.
    #[error("measurement too short: only {cycles} recv cycles completed (need >= 100)")]
    MeasurementTooShort { cycles: u64 },

    /// An environment name was not recognized.
    #[error("unknown environment: {0}")]
    UnknownEnv(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
