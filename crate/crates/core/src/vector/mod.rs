//! Vectorization: simulate M emulated environments across W workers,
//! receiving batches of N environment slots per recv.
//!
//! Four separately optimized code paths cover the common workload shapes:
//!
//! - [`CodePath::Synchronous`] (`N == M`): recv waits for every worker and
//!   returns the whole shared observation region without copying.
//! - [`CodePath::AsyncCopy`]: recv takes the first N ready slots and
//!   compacts them into one contiguous buffer (a single copy).
//! - [`CodePath::AsyncWholeWorker`] (`N == envs_per_worker`): each batch is
//!   one worker's contiguous region, so it loads without a copy.
//! - [`CodePath::ZeroCopy`]: batches are fixed contiguous worker groups
//!   cycled round-robin, each a borrowed window over shared memory that
//!   stays valid until the next send to those workers.
//!
//! Workers busy-wait on an unlocked shared flag word (bounded spin, then
//! yield); data moves through the shared regions and only per-episode info
//! aggregates cross a message channel, so steady-state steps perform no
//! inter-process communication at all.

mod shared;
mod worker;

pub use shared::{
    live_shared_regions, live_worker_threads, RegionLayout, SharedBufferSet, FLAG_ACTIONS_READY,
    FLAG_DEAD, FLAG_EXIT, FLAG_IDLE, FLAG_OBS_READY, FLAG_RESET, FLAG_STEPPING,
};
pub use worker::{SlotStats, SpinCfg};

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::Ordering;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::emulation::{wrap, EmulatedEnv};
use crate::env::{BoxEnv, EnvFactory};
use crate::error::{Error, Result};

use worker::{build_envs, cycle_reset, cycle_step, spin_step, worker_main, WorkerCtx};

/// Execution backend for the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Environments step inline on the controller thread. The reference
    /// backend for determinism oracles and debugging.
    Serial,
    /// One thread per worker over shared memory.
    Shared,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Serial => "serial",
            Backend::Shared => "shared",
        })
    }
}

/// Which recv/copy strategy a config selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodePath {
    Synchronous,
    AsyncCopy,
    AsyncWholeWorker,
    ZeroCopy,
}

impl CodePath {
    pub fn is_async_pool(self) -> bool {
        !matches!(self, CodePath::Synchronous)
    }
}

impl fmt::Display for CodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodePath::Synchronous => "synchronous",
            CodePath::AsyncCopy => "async_copy",
            CodePath::AsyncWholeWorker => "async_whole_worker",
            CodePath::ZeroCopy => "zero_copy",
        })
    }
}

/// Pool topology: W workers × E environments each, batches of N slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecConfig {
    pub backend: Backend,
    pub num_workers: usize,
    pub envs_per_worker: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub zero_copy: bool,
    #[serde(default)]
    pub seed_base: u64,
}

impl VecConfig {
    pub fn new(backend: Backend, num_workers: usize, envs_per_worker: usize, batch_size: usize) -> Self {
        VecConfig {
            backend,
            num_workers,
            envs_per_worker,
            batch_size,
            zero_copy: false,
            seed_base: 0,
        }
    }

    pub fn with_zero_copy(mut self) -> Self {
        self.zero_copy = true;
        self
    }

    pub fn with_seed(mut self, seed_base: u64) -> Self {
        self.seed_base = seed_base;
        self
    }

    /// Total environment slots `M = W × E`.
    pub fn total_envs(&self) -> usize {
        self.num_workers * self.envs_per_worker
    }

    /// Check invariants and select the code path:
    /// `N == M` is synchronous; otherwise `zero_copy` selects the zero-copy
    /// group path, `N == E` the whole-worker path, and anything else the
    /// copying async path.
    pub fn validate(&self) -> Result<CodePath> {
        let (w, e, n) = (self.num_workers, self.envs_per_worker, self.batch_size);
        let m = self.total_envs();
        if w < 1 || e < 1 {
            return Err(Error::ConfigInvalid(format!(
                "need at least one worker and one env per worker (got W={w}, E={e})"
            )));
        }
        if n < 1 || n > m {
            return Err(Error::ConfigInvalid(format!(
                "batch size must satisfy 1 <= N <= M (got N={n}, M={m})"
            )));
        }
        if self.zero_copy {
            if n % e != 0 {
                return Err(Error::ConfigInvalid(format!(
                    "zero-copy batches must cover whole workers (N={n} not a multiple of E={e})"
                )));
            }
            if m % n != 0 {
                return Err(Error::ConfigInvalid(format!(
                    "zero-copy batches must tile the pool (M={m} not a multiple of N={n})"
                )));
            }
        }
        Ok(if n == m {
            CodePath::Synchronous
        } else if self.zero_copy {
            CodePath::ZeroCopy
        } else if n == e {
            CodePath::AsyncWholeWorker
        } else {
            CodePath::AsyncCopy
        })
    }
}

impl fmt::Display for VecConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} W={} E={} N={}{}",
            self.backend,
            self.num_workers,
            self.envs_per_worker,
            self.batch_size,
            if self.zero_copy { " zero-copy" } else { "" }
        )
    }
}

enum ObsView {
    Owned(Vec<u8>),
    Shared {
        set: Arc<SharedBufferSet>,
        offset: usize,
        len: usize,
    },
}

impl fmt::Debug for ObsView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsView::Owned(v) => write!(f, "Owned({} bytes)", v.len()),
            ObsView::Shared { offset, len, .. } => {
                write!(f, "Shared(offset={offset}, len={len})")
            }
        }
    }
}

/// One recv result: N environment slots' rows plus any per-episode info
/// aggregates received this cycle.
///
/// `slot_ids[i]` owns row group `i` in every field. For the no-copy paths
/// the observation bytes are a window over shared memory: the window reads
/// are always memory-safe, but its contents are only guaranteed stable
/// until the next send to the workers owning those slots.
#[derive(Debug)]
pub struct Batch {
    pub slot_ids: Vec<usize>,
    pub rewards: Vec<f32>,
    pub terminals: Vec<bool>,
    pub truncations: Vec<bool>,
    pub masks: Vec<bool>,
    pub infos: Vec<SlotStats>,
    obs: ObsView,
    row_bytes: usize,
    max_agents: usize,
}

impl Batch {
    pub fn num_slots(&self) -> usize {
        self.slot_ids.len()
    }

    /// The whole observation window: `num_slots × max_agents × total_bytes`.
    pub fn obs_bytes(&self) -> &[u8] {
        match &self.obs {
            ObsView::Owned(v) => v,
            // SAFETY: slots in this batch are owned by the controller until
            // the next send covering them; reads are in-bounds for the
            // region's lifetime, which the Arc pins.
            ObsView::Shared { set, offset, len } => unsafe { set.bytes(*offset, *len) },
        }
    }

    /// Observation rows of batch entry `i`.
    pub fn slot_obs(&self, i: usize) -> &[u8] {
        &self.obs_bytes()[i * self.row_bytes..(i + 1) * self.row_bytes]
    }

    /// Reward row of batch entry `i` (one value per agent row).
    pub fn slot_rewards(&self, i: usize) -> &[f32] {
        &self.rewards[i * self.max_agents..(i + 1) * self.max_agents]
    }

    pub fn slot_terminals(&self, i: usize) -> &[bool] {
        &self.terminals[i * self.max_agents..(i + 1) * self.max_agents]
    }

    pub fn slot_masks(&self, i: usize) -> &[bool] {
        &self.masks[i * self.max_agents..(i + 1) * self.max_agents]
    }

    /// True when the batch borrows shared memory rather than owning a copy.
    pub fn is_borrowed(&self) -> bool {
        matches!(self.obs, ObsView::Shared { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    /// Never reset; no work outstanding.
    Unstarted,
    /// Actions (or a reset) dispatched; worker computing.
    InFlight,
    /// Results published, not yet delivered by recv.
    Ready,
    /// Delivered by recv; awaiting actions.
    Delivered,
    /// Actions written; worker not yet dispatched (siblings pending).
    ActionsWritten,
}

/// Heartbeat policy: a worker stuck in `STEPPING` longer than the timeout is
/// declared dead. The default scales with the observed p99 worker cycle
/// time; `ENVMILL_HEARTBEAT_TIMEOUT_MS` pins a fixed timeout instead.
#[derive(Debug, Clone, Copy)]
struct HeartbeatCfg {
    fixed_ms: Option<u64>,
}

impl HeartbeatCfg {
    fn from_env() -> Self {
        HeartbeatCfg {
            fixed_ms: std::env::var("ENVMILL_HEARTBEAT_TIMEOUT_MS")
                .ok()
                .and_then(|v| v.parse().ok()),
        }
    }

    fn timeout(&self, cycle_secs: &VecDeque<f64>) -> Duration {
        if let Some(ms) = self.fixed_ms {
            return Duration::from_millis(ms);
        }
        if cycle_secs.is_empty() {
            return Duration::from_secs(60);
        }
        let mut sorted: Vec<f64> = cycle_secs.iter().copied().collect();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let p99 = sorted[(sorted.len() * 99) / 100..].first().copied().unwrap_or(0.0);
        Duration::from_secs_f64((20.0 * p99).max(1.0))
    }
}

const CLOSE_GRACE: Duration = Duration::from_secs(5);
const CYCLE_SAMPLES: usize = 512;

/// Handle over an open pool. One controller context owns `send`/`recv`/
/// `close`; workers are independent execution contexts.
pub struct VecHandle {
    cfg: VecConfig,
    path: CodePath,
    nvec: Vec<u32>,
    shared: Arc<SharedBufferSet>,
    handles: Vec<JoinHandle<()>>,
    serial_envs: Option<Vec<Vec<EmulatedEnv<BoxEnv>>>>,
    serial_infos: VecDeque<SlotStats>,
    info_rx: Vec<Receiver<SlotStats>>,
    state: Vec<SlotState>,
    ready: VecDeque<usize>,
    harvested: Vec<bool>,
    dispatched_at: Vec<Option<Instant>>,
    cycle_secs: VecDeque<f64>,
    zc_cursor: usize,
    closed: bool,
    leaked: usize,
    spin: SpinCfg,
    hb: HeartbeatCfg,
    epoch: Instant,
}

/// Open a pool: allocate the shared regions, spawn the workers (each owning
/// `envs_per_worker` environments; slot `k` lives on worker `k / E`), and
/// select the code path. No environment steps are taken yet; call
/// [`VecHandle::async_reset`] first.
pub fn open_vectorized(factory: EnvFactory, cfg: &VecConfig) -> Result<VecHandle> {
    let path = cfg.validate()?;
    let (w, e, m) = (cfg.num_workers, cfg.envs_per_worker, cfg.total_envs());

    // Probe one environment for the pool dimensions; the factory contract
    // requires identical spaces across slots.
    let probe = wrap(factory(cfg.seed_base))?;
    let layout = RegionLayout::compute(
        m,
        probe.max_agents(),
        probe.obs_layout().total_bytes,
        probe.action_components(),
    );
    let nvec = probe.action_spec().nvec.clone();
    drop(probe);

    let shared = Arc::new(SharedBufferSet::new(layout, w));
    let epoch = Instant::now();
    let spin = SpinCfg::from_env();

    let mut handles = Vec::new();
    let mut info_rx = Vec::new();
    let mut serial_envs = None;

    match cfg.backend {
        Backend::Serial => {
            let mut per_worker = Vec::with_capacity(w);
            for wi in 0..w {
                let envs = build_envs(&factory, wi * e, e, cfg.seed_base, &shared)
                    .map_err(Error::SpawnFailure)?;
                per_worker.push(envs);
            }
            serial_envs = Some(per_worker);
        }
        Backend::Shared => {
            for wi in 0..w {
                let (tx, rx) = sync_channel::<SlotStats>(1024);
                info_rx.push(rx);
                let ctx = WorkerCtx {
                    idx: wi,
                    first_slot: wi * e,
                    env_count: e,
                    construct_seed_base: cfg.seed_base,
                    shared: Arc::clone(&shared),
                    factory: Arc::clone(&factory),
                    info_tx: tx,
                    epoch,
                    spin,
                };
                let handle = std::thread::Builder::new()
                    .name(format!("envmill-worker-{wi}"))
                    .spawn(move || worker_main(ctx))
                    .map_err(|e| Error::SpawnFailure(e.to_string()))?;
                handles.push(handle);
            }
        }
    }

    Ok(VecHandle {
        cfg: cfg.clone(),
        path,
        nvec,
        shared,
        handles,
        serial_envs,
        serial_infos: VecDeque::new(),
        info_rx,
        state: vec![SlotState::Unstarted; m],
        ready: VecDeque::new(),
        harvested: vec![false; w],
        dispatched_at: vec![None; w],
        cycle_secs: VecDeque::new(),
        zc_cursor: 0,
        closed: false,
        leaked: 0,
        spin,
        hb: HeartbeatCfg::from_env(),
        epoch,
    })
}

impl VecHandle {
    pub fn code_path(&self) -> CodePath {
        self.path
    }

    pub fn config(&self) -> &VecConfig {
        &self.cfg
    }

    pub fn num_slots(&self) -> usize {
        self.cfg.total_envs()
    }

    pub fn batch_size(&self) -> usize {
        self.cfg.batch_size
    }

    pub fn max_agents(&self) -> usize {
        self.shared.layout.max_agents
    }

    /// Flat action components per agent row.
    pub fn action_components(&self) -> usize {
        self.shared.layout.action_components
    }

    pub fn nvec(&self) -> &[u32] {
        &self.nvec
    }

    /// Bytes of one slot's observation rows.
    pub fn obs_slot_bytes(&self) -> usize {
        self.shared.layout.obs_slot_bytes()
    }

    /// The shared region layout (documented bit-exactly in [`shared`]).
    pub fn region_layout(&self) -> &RegionLayout {
        &self.shared.layout
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            return Err(Error::WorkerDead("handle is closed".to_string()));
        }
        Ok(())
    }

    /// Reset every environment slot; slot `k` receives `seed + k`. Any
    /// undelivered results are discarded. The first recv after a reset
    /// returns reset observations with all flags false.
    pub fn async_reset(&mut self, seed: u64) -> Result<()> {
        self.ensure_open()?;
        // Quiesce: never overwrite the flag of a mid-step worker.
        let mut spins = 0u32;
        while self.state.iter().any(|s| *s == SlotState::InFlight) {
            self.harvest()?;
            spin_step(&mut spins, self.spin);
        }
        self.shared.set_reset_seed(seed);
        self.state.fill(SlotState::InFlight);
        self.ready.clear();
        self.zc_cursor = 0;
        for w in 0..self.cfg.num_workers {
            self.harvested[w] = false;
            self.dispatched_at[w] = Some(Instant::now());
            self.dispatch(w, FLAG_RESET)?;
        }
        Ok(())
    }

    /// Deliver actions for slots returned by recv. `actions` is a
    /// `slot_ids.len() × max_agents × action_components` i32 matrix in
    /// `slot_ids` order. A worker is dispatched exactly once, when its full
    /// slot set has actions written.
    pub fn send(&mut self, slot_ids: &[usize], actions: &[i32]) -> Result<()> {
        self.ensure_open()?;
        let a = self.shared.layout.max_agents;
        let c = self.shared.layout.action_components;
        let expected = slot_ids.len() * a * c;
        if actions.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: actions.len(),
            });
        }
        let m = self.num_slots();
        for (i, &slot) in slot_ids.iter().enumerate() {
            if slot >= m {
                return Err(Error::ProtocolViolation(format!(
                    "slot {slot} out of range (M={m})"
                )));
            }
            if self.state[slot] != SlotState::Delivered {
                return Err(Error::ProtocolViolation(format!(
                    "send to slot {slot} which is not awaiting actions \
                     (double-send or never received)"
                )));
            }
            let row = &actions[i * a * c..(i + 1) * a * c];
            // SAFETY: the slot is Delivered, so its worker is parked waiting
            // for a flag transition and does not touch its cells.
            unsafe {
                self.shared
                    .i32s_mut(self.shared.actions_slot_offset(slot), a * c)
                    .copy_from_slice(row);
            }
            self.state[slot] = SlotState::ActionsWritten;
        }
        // Dispatch every worker whose full slot set is now covered.
        let e = self.cfg.envs_per_worker;
        let mut workers: Vec<usize> = slot_ids.iter().map(|s| s / e).collect();
        workers.sort_unstable();
        workers.dedup();
        for w in workers {
            let slots = w * e..(w + 1) * e;
            if slots.clone().all(|s| self.state[s] == SlotState::ActionsWritten) {
                for s in slots {
                    self.state[s] = SlotState::InFlight;
                }
                self.harvested[w] = false;
                self.dispatched_at[w] = Some(Instant::now());
                self.dispatch(w, FLAG_ACTIONS_READY)?;
            }
        }
        Ok(())
    }

    /// Block until a batch of `batch_size` slots can be assembled, taking
    /// the first workers to finish (ready workers harvested in ascending
    /// index order within a poll sweep, delivered strictly in readiness
    /// order across sweeps).
    pub fn recv(&mut self) -> Result<Batch> {
        self.ensure_open()?;
        let mut spins = 0u32;
        let mut polls = 0u64;
        loop {
            self.harvest()?;
            if let Some(selection) = self.try_select() {
                return self.assemble(selection);
            }
            self.check_feasible()?;
            polls += 1;
            if polls % 4096 == 0 {
                self.check_heartbeats()?;
            }
            spin_step(&mut spins, self.spin);
        }
    }

    /// Convenience for the synchronous path: send actions for all `M` slots
    /// in slot order, then recv the full batch.
    pub fn sync_step(&mut self, actions: &[i32]) -> Result<Batch> {
        if self.path != CodePath::Synchronous {
            return Err(Error::ConfigInvalid(
                "sync_step requires the synchronous code path (N == M)".to_string(),
            ));
        }
        let all: Vec<usize> = (0..self.num_slots()).collect();
        self.send(&all, actions)?;
        self.recv()
    }

    /// Signal workers to exit and join them within a bounded grace period.
    /// Idempotent; returns the number of workers that failed to join (also
    /// available afterwards via [`Self::leaked_workers`]).
    pub fn close(&mut self) -> usize {
        if self.closed {
            return self.leaked;
        }
        self.closed = true;
        self.serial_envs = None;
        for w in 0..self.handles.len() {
            self.shared.flag(w).store(FLAG_EXIT, Ordering::Release);
        }
        let deadline = Instant::now() + CLOSE_GRACE;
        let mut remaining: Vec<JoinHandle<()>> = self.handles.drain(..).collect();
        while !remaining.is_empty() && Instant::now() < deadline {
            let (done, pending): (Vec<_>, Vec<_>) =
                remaining.into_iter().partition(|h| h.is_finished());
            for h in done {
                let _ = h.join();
            }
            remaining = pending;
            if !remaining.is_empty() {
                std::thread::sleep(Duration::from_millis(1));
            }
        }
        self.leaked = remaining.len();
        drop(remaining); // leaked workers detach; accounting reports them
        self.leaked
    }

    pub fn leaked_workers(&self) -> usize {
        self.leaked
    }

    fn dispatch(&mut self, w: usize, cmd: u32) -> Result<()> {
        match self.serial_envs.as_mut() {
            None => {
                self.shared.flag(w).store(cmd, Ordering::Release);
                Ok(())
            }
            Some(all_envs) => {
                // Serial backend: the worker's cycle runs inline, so results
                // are ready before dispatch returns.
                let shared = &self.shared;
                let first = w * self.cfg.envs_per_worker;
                let envs = &mut all_envs[w];
                let infos = &mut self.serial_infos;
                let result = if cmd == FLAG_RESET {
                    cycle_reset(shared, envs, first, shared.reset_seed())
                } else {
                    cycle_step(shared, envs, first, &mut |s| infos.push_back(s))
                };
                match result {
                    Ok(()) => {
                        shared.flag(w).store(FLAG_OBS_READY, Ordering::Release);
                        Ok(())
                    }
                    Err(msg) => {
                        shared.note_death(msg);
                        shared.flag(w).store(FLAG_DEAD, Ordering::Release);
                        Err(Error::WorkerDead(shared.death_note()))
                    }
                }
            }
        }
    }

    /// Fold OBS_READY workers into the ready queue: each worker's slots
    /// enqueue together, ascending worker index within a sweep, readiness
    /// order across sweeps.
    fn harvest(&mut self) -> Result<()> {
        let e = self.cfg.envs_per_worker;
        for w in 0..self.cfg.num_workers {
            if self.harvested[w] {
                continue;
            }
            match self.shared.flag(w).load(Ordering::Acquire) {
                FLAG_DEAD => return Err(Error::WorkerDead(self.shared.death_note())),
                FLAG_OBS_READY => {
                    self.harvested[w] = true;
                    if let Some(t0) = self.dispatched_at[w].take() {
                        if self.cycle_secs.len() == CYCLE_SAMPLES {
                            self.cycle_secs.pop_front();
                        }
                        self.cycle_secs.push_back(t0.elapsed().as_secs_f64());
                    }
                    for slot in w * e..(w + 1) * e {
                        if self.state[slot] == SlotState::InFlight {
                            self.state[slot] = SlotState::Ready;
                            self.ready.push_back(slot);
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn try_select(&mut self) -> Option<Vec<usize>> {
        let n = self.cfg.batch_size;
        match self.path {
            CodePath::Synchronous => {
                if self.ready.len() == self.num_slots() {
                    self.ready.clear();
                    Some((0..self.num_slots()).collect())
                } else {
                    None
                }
            }
            CodePath::AsyncCopy | CodePath::AsyncWholeWorker => {
                if self.ready.len() >= n {
                    Some(self.ready.drain(..n).collect())
                } else {
                    None
                }
            }
            CodePath::ZeroCopy => {
                let group = self.zc_cursor;
                let range = group * n..(group + 1) * n;
                if range.clone().all(|s| self.state[s] == SlotState::Ready) {
                    self.zc_cursor = (group + 1) % (self.num_slots() / n);
                    let selected: Vec<usize> = range.collect();
                    self.ready.retain(|s| !selected.contains(s));
                    Some(selected)
                } else {
                    None
                }
            }
        }
    }

    /// Error out instead of hanging when the outstanding work can never
    /// assemble a batch (recv without a covering send).
    fn check_feasible(&self) -> Result<()> {
        let n = self.cfg.batch_size;
        let feasible = match self.path {
            CodePath::Synchronous => self
                .state
                .iter()
                .all(|s| matches!(s, SlotState::InFlight | SlotState::Ready)),
            CodePath::ZeroCopy => {
                let group = self.zc_cursor;
                (group * n..(group + 1) * n)
                    .all(|s| matches!(self.state[s], SlotState::InFlight | SlotState::Ready))
            }
            _ => {
                let available = self
                    .state
                    .iter()
                    .filter(|s| matches!(s, SlotState::InFlight | SlotState::Ready))
                    .count();
                available >= n
            }
        };
        if feasible {
            Ok(())
        } else {
            Err(Error::ProtocolViolation(
                "recv without enough outstanding sends to assemble a batch".to_string(),
            ))
        }
    }

    fn check_heartbeats(&self) -> Result<()> {
        if self.serial_envs.is_some() || self.handles.is_empty() {
            return Ok(());
        }
        let timeout = self.hb.timeout(&self.cycle_secs);
        let now_ns = self.epoch.elapsed().as_nanos() as u64;
        for w in 0..self.cfg.num_workers {
            if self.harvested[w] {
                continue;
            }
            if self.shared.flag(w).load(Ordering::Acquire) == FLAG_STEPPING {
                let hb = self.shared.heartbeat(w).load(Ordering::Relaxed);
                let stale_ns = now_ns.saturating_sub(hb);
                if stale_ns > timeout.as_nanos() as u64 {
                    return Err(Error::WorkerDead(format!(
                        "worker {w} heartbeat stale for {:.1}s (timeout {:.1}s)",
                        stale_ns as f64 / 1e9,
                        timeout.as_secs_f64()
                    )));
                }
            }
        }
        Ok(())
    }

    fn assemble(&mut self, selection: Vec<usize>) -> Result<Batch> {
        let a = self.shared.layout.max_agents;
        let row = self.shared.layout.obs_slot_bytes();
        let n = selection.len();
        let mut rewards = Vec::with_capacity(n * a);
        let mut terminals = Vec::with_capacity(n * a);
        let mut truncations = Vec::with_capacity(n * a);
        let mut masks = Vec::with_capacity(n * a);
        for &slot in &selection {
            self.state[slot] = SlotState::Delivered;
            // SAFETY: the slot is Ready — its worker published OBS_READY
            // (acquire-observed) and will not write again until dispatched.
            unsafe {
                rewards.extend_from_slice(self.shared.f32s(self.shared.rewards_slot_offset(slot), a));
                terminals.extend(
                    self.shared
                        .bytes(self.shared.terminals_slot_offset(slot), a)
                        .iter()
                        .map(|&b| b != 0),
                );
                truncations.extend(
                    self.shared
                        .bytes(self.shared.truncations_slot_offset(slot), a)
                        .iter()
                        .map(|&b| b != 0),
                );
                masks.extend(
                    self.shared
                        .bytes(self.shared.masks_slot_offset(slot), a)
                        .iter()
                        .map(|&b| b != 0),
                );
            }
        }

        let obs = match self.path {
            CodePath::AsyncCopy => {
                let mut buf = Vec::with_capacity(n * row);
                for &slot in &selection {
                    // SAFETY: as above — one compacting copy per batch.
                    unsafe {
                        buf.extend_from_slice(
                            self.shared.bytes(self.shared.obs_slot_offset(slot), row),
                        );
                    }
                }
                ObsView::Owned(buf)
            }
            _ => {
                debug_assert!(selection.windows(2).all(|p| p[1] == p[0] + 1));
                ObsView::Shared {
                    set: Arc::clone(&self.shared),
                    offset: self.shared.obs_slot_offset(selection[0]),
                    len: n * row,
                }
            }
        };

        let mut infos: Vec<SlotStats> = self.serial_infos.drain(..).collect();
        for rx in &self.info_rx {
            infos.extend(rx.try_iter());
        }

        Ok(Batch {
            slot_ids: selection,
            rewards,
            terminals,
            truncations,
            masks,
            infos,
            obs,
            row_bytes: row,
            max_agents: a,
        })
    }
}

impl Drop for VecHandle {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{factory, AgentId, AgentObs, AgentResult, Env};
    use crate::space::{ElemKind, SpaceNode, StructValue};

    /// Zero-work env whose observation stamps (seed, global step counter).
    struct CounterEnv {
        seed: u64,
        counter: u64,
        episode_len: u64,
        episode_step: u64,
        step_delay: Duration,
    }

    impl CounterEnv {
        fn new(seed: u64) -> Self {
            CounterEnv {
                seed,
                counter: 0,
                episode_len: 16,
                episode_step: 0,
                step_delay: Duration::ZERO,
            }
        }

        fn obs(&self) -> StructValue {
            let mut bytes = Vec::with_capacity(16);
            bytes.extend_from_slice(&self.counter.to_le_bytes());
            bytes.extend_from_slice(&self.seed.to_le_bytes());
            StructValue::u8s(bytes)
        }
    }

    impl Env for CounterEnv {
        fn observation_space(&self) -> SpaceNode {
            SpaceNode::boxed(vec![16], ElemKind::U8, 0.0, 255.0)
        }

        fn action_space(&self) -> SpaceNode {
            SpaceNode::discrete(4)
        }

        fn reset(&mut self, seed: u64) -> Vec<AgentObs> {
            self.seed = seed;
            self.episode_step = 0;
            vec![AgentObs::new(0, self.obs())]
        }

        fn step(&mut self, _actions: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
            if !self.step_delay.is_zero() {
                let start = Instant::now();
                while start.elapsed() < self.step_delay {
                    std::hint::spin_loop();
                }
            }
            self.counter += 1;
            self.episode_step += 1;
            let done = self.episode_step >= self.episode_len;
            vec![AgentResult::new(0, self.obs(), 0.5).done(done, false)]
        }
    }

    fn counter_factory() -> EnvFactory {
        factory(|seed| Box::new(CounterEnv::new(seed)))
    }

    fn zero_actions(h: &VecHandle, n_slots: usize) -> Vec<i32> {
        vec![0; n_slots * h.max_agents() * h.action_components()]
    }

    #[test]
    fn code_path_selection_matches_topology() {
        let sync = VecConfig::new(Backend::Shared, 4, 2, 8);
        assert_eq!(sync.validate().unwrap(), CodePath::Synchronous);
        let whole = VecConfig::new(Backend::Shared, 4, 2, 2);
        assert_eq!(whole.validate().unwrap(), CodePath::AsyncWholeWorker);
        let copy = VecConfig::new(Backend::Shared, 4, 2, 4);
        assert_eq!(copy.validate().unwrap(), CodePath::AsyncCopy);
        let zc = VecConfig::new(Backend::Shared, 4, 2, 4).with_zero_copy();
        assert_eq!(zc.validate().unwrap(), CodePath::ZeroCopy);
    }

    #[test]
    fn misaligned_zero_copy_is_invalid() {
        let cfg = VecConfig::new(Backend::Shared, 4, 2, 3).with_zero_copy();
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
        let cfg = VecConfig::new(Backend::Shared, 3, 2, 4).with_zero_copy();
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn serial_degenerate_pool_steps_inline() {
        let cfg = VecConfig::new(Backend::Serial, 1, 1, 1);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let b = h.recv().unwrap();
        assert_eq!(b.slot_ids, vec![0]);
        assert!(b.terminals.iter().all(|&t| !t));
        let actions = zero_actions(&h, 1);
        h.send(&b.slot_ids.clone(), &actions).unwrap();
        let b2 = h.recv().unwrap();
        assert_eq!(b2.slot_ids, vec![0]);
        // Counter advanced by one.
        assert_eq!(b2.slot_obs(0)[0], 1);
    }

    #[test]
    fn sync_recv_returns_slots_in_order() {
        for backend in [Backend::Serial, Backend::Shared] {
            let cfg = VecConfig::new(backend, 4, 2, 8);
            let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
            h.async_reset(7).unwrap();
            let b = h.recv().unwrap();
            assert_eq!(b.slot_ids, (0..8).collect::<Vec<_>>());
            assert!(b.is_borrowed());
            // Slot k was seeded with 7 + k.
            for i in 0..8 {
                let seed = u64::from_le_bytes(b.slot_obs(i)[8..16].try_into().unwrap());
                assert_eq!(seed, 7 + i as u64);
            }
            h.close();
        }
    }

    #[test]
    fn sync_step_equals_send_plus_recv() {
        let cfg = VecConfig::new(Backend::Serial, 2, 2, 4);
        let mut a = open_vectorized(counter_factory(), &cfg).unwrap();
        let mut b = open_vectorized(counter_factory(), &cfg).unwrap();
        a.async_reset(0).unwrap();
        b.async_reset(0).unwrap();
        let _ = a.recv().unwrap();
        let _ = b.recv().unwrap();
        let actions = zero_actions(&a, 4);
        let ba = a.sync_step(&actions).unwrap();
        let all: Vec<usize> = (0..4).collect();
        b.send(&all, &actions).unwrap();
        let bb = b.recv().unwrap();
        assert_eq!(ba.slot_ids, bb.slot_ids);
        assert_eq!(ba.obs_bytes(), bb.obs_bytes());
        assert_eq!(ba.rewards, bb.rewards);
    }

    #[test]
    fn sync_step_rejected_on_async_handle() {
        let cfg = VecConfig::new(Backend::Serial, 2, 2, 2);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let err = h.sync_step(&zero_actions(&h, 4)).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(_)));
    }

    #[test]
    fn double_send_is_a_protocol_violation() {
        let cfg = VecConfig::new(Backend::Serial, 2, 2, 2);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let b = h.recv().unwrap();
        let ids = b.slot_ids.clone();
        let actions = zero_actions(&h, 2);
        h.send(&ids, &actions).unwrap();
        let err = h.send(&ids, &actions).unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)));
    }

    #[test]
    fn recv_without_outstanding_send_errors_instead_of_hanging() {
        let cfg = VecConfig::new(Backend::Serial, 1, 2, 2);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        let err = h.recv().unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)));
        h.async_reset(0).unwrap();
        let _ = h.recv().unwrap();
        // Batch delivered but not sent back: a second recv cannot complete.
        let err = h.recv().unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)));
    }

    #[test]
    fn reset_on_closed_handle_reports_worker_dead() {
        let cfg = VecConfig::new(Backend::Shared, 1, 1, 1);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.close();
        assert!(matches!(h.async_reset(0), Err(Error::WorkerDead(_))));
    }

    #[test]
    fn close_is_idempotent() {
        // Global allocation accounting is asserted in the acceptance suite,
        // which serializes; unit tests run in parallel and would race on it.
        let cfg = VecConfig::new(Backend::Shared, 2, 1, 2);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let _ = h.recv().unwrap();
        assert_eq!(h.close(), 0);
        assert_eq!(h.close(), 0);
    }

    #[test]
    fn close_mid_step_joins_within_grace() {
        let f = factory(|seed| {
            let mut env = CounterEnv::new(seed);
            env.step_delay = Duration::from_millis(100);
            Box::new(env) as BoxEnv
        });
        let cfg = VecConfig::new(Backend::Shared, 2, 1, 2);
        let mut h = open_vectorized(f, &cfg).unwrap();
        h.async_reset(0).unwrap();
        let b = h.recv().unwrap();
        let actions = zero_actions(&h, 2);
        h.send(&b.slot_ids.clone(), &actions).unwrap();
        // Workers are now mid-step for ~100ms.
        assert_eq!(h.close(), 0);
    }

    #[test]
    fn panicking_env_surfaces_as_worker_dead() {
        struct Bomb;
        impl Env for Bomb {
            fn observation_space(&self) -> SpaceNode {
                SpaceNode::boxed(vec![1], ElemKind::U8, 0.0, 255.0)
            }
            fn action_space(&self) -> SpaceNode {
                SpaceNode::discrete(2)
            }
            fn reset(&mut self, _: u64) -> Vec<AgentObs> {
                vec![AgentObs::new(0, StructValue::u8s(vec![0]))]
            }
            fn step(&mut self, _: &[(AgentId, StructValue)]) -> Vec<AgentResult> {
                panic!("boom");
            }
        }
        let cfg = VecConfig::new(Backend::Shared, 1, 1, 1);
        let mut h = open_vectorized(factory(|_| Box::new(Bomb)), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let b = h.recv().unwrap();
        h.send(&b.slot_ids.clone(), &[0]).unwrap();
        let err = h.recv().unwrap_err();
        assert!(matches!(err, Error::WorkerDead(_)), "got {err:?}");
    }

    #[test]
    fn first_ready_workers_fill_async_batches() {
        // Workers 0,1 fast; workers 2,3 slow. With all workers dispatched in
        // one send, recv returns the fast workers' slots. The gap is wide
        // enough that scheduling noise from parallel tests cannot invert it.
        let f = factory(|seed| {
            let mut env = CounterEnv::new(seed);
            env.step_delay = if seed < 4 {
                Duration::from_millis(1)
            } else {
                Duration::from_millis(400)
            };
            Box::new(env) as BoxEnv
        });
        let cfg = VecConfig::new(Backend::Shared, 4, 2, 4);
        let mut h = open_vectorized(f, &cfg).unwrap();
        h.async_reset(0).unwrap();
        // Drain the whole reset cohort without sending anything back, so
        // every slot is delivered exactly once no matter how worker startup
        // is scheduled.
        let b1 = h.recv().unwrap();
        let b2 = h.recv().unwrap();
        let mut all: Vec<usize> = b1.slot_ids.iter().chain(&b2.slot_ids).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        drop((b1, b2));
        // One send covering all slots starts every worker together.
        h.send(&all, &zero_actions(&h, 8)).unwrap();
        let b3 = h.recv().unwrap();
        assert_eq!(b3.slot_ids, vec![0, 1, 2, 3]);
        h.close();
    }

    #[test]
    fn whole_worker_batches_are_single_workers() {
        let cfg = VecConfig::new(Backend::Shared, 3, 2, 2);
        assert_eq!(cfg.validate().unwrap(), CodePath::AsyncWholeWorker);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        for _ in 0..6 {
            let b = h.recv().unwrap();
            assert!(b.is_borrowed());
            assert_eq!(b.slot_ids.len(), 2);
            assert_eq!(b.slot_ids[0] / 2, b.slot_ids[1] / 2, "one worker per batch");
            h.send(&b.slot_ids.clone(), &zero_actions(&h, 2)).unwrap();
        }
        h.close();
    }

    #[test]
    fn zero_copy_groups_rotate_round_robin() {
        let cfg = VecConfig::new(Backend::Shared, 4, 1, 2).with_zero_copy();
        assert_eq!(cfg.validate().unwrap(), CodePath::ZeroCopy);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let mut seen = Vec::new();
        for _ in 0..4 {
            let b = h.recv().unwrap();
            assert!(b.is_borrowed());
            seen.push(b.slot_ids.clone());
            h.send(&b.slot_ids.clone(), &zero_actions(&h, 2)).unwrap();
        }
        assert_eq!(seen, vec![vec![0, 1], vec![2, 3], vec![0, 1], vec![2, 3]]);
        h.close();
    }

    #[test]
    fn identical_configs_and_seeds_give_identical_first_batches() {
        let cfg = VecConfig::new(Backend::Serial, 2, 2, 4);
        let mut a = open_vectorized(counter_factory(), &cfg).unwrap();
        let mut b = open_vectorized(counter_factory(), &cfg).unwrap();
        a.async_reset(3).unwrap();
        b.async_reset(3).unwrap();
        let ba = a.recv().unwrap();
        let bb = b.recv().unwrap();
        assert_eq!(ba.slot_ids, bb.slot_ids);
        assert_eq!(ba.obs_bytes(), bb.obs_bytes());
    }

    #[test]
    fn episode_aggregates_piggyback_on_recv() {
        // Episode length 16: after 16 steps of a slot, exactly one aggregate
        // arrives tagged with that slot.
        let cfg = VecConfig::new(Backend::Serial, 1, 1, 1);
        let mut h = open_vectorized(counter_factory(), &cfg).unwrap();
        h.async_reset(0).unwrap();
        let mut aggregates = Vec::new();
        let mut b = h.recv().unwrap();
        for _ in 0..16 {
            h.send(&b.slot_ids.clone(), &zero_actions(&h, 1)).unwrap();
            b = h.recv().unwrap();
            aggregates.extend(b.infos.iter().cloned());
        }
        assert_eq!(aggregates.len(), 1);
        assert_eq!(aggregates[0].slot, 0);
        assert_eq!(aggregates[0].stats.episode_length(), 16.0);
        assert!((aggregates[0].stats.episode_return() - 8.0).abs() < 1e-6);
    }
}
