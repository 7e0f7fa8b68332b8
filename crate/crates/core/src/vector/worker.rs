//! Worker-side step loop, shared by worker threads and the serial backend.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::Ordering;
use std::sync::mpsc::SyncSender;
use std::sync::Arc;
use std::time::Instant;

use super::shared::{
    SharedBufferSet, WorkerGuard, FLAG_ACTIONS_READY, FLAG_DEAD, FLAG_EXIT, FLAG_OBS_READY,
    FLAG_RESET, FLAG_STEPPING,
};
use crate::emulation::{wrap, EmulatedEnv, EpisodeStats, StepBuffers};
use crate::env::{BoxEnv, EnvFactory};

/// Bounded spin with progressive yield: busy-spin for the budget, then hand
/// the core back to the scheduler between polls.
#[derive(Debug, Clone, Copy)]
pub struct SpinCfg {
    pub budget: u32,
}

impl SpinCfg {
    /// Reads `ENVMILL_SPIN_BUDGET` (spins before yielding; default 10000).
    pub fn from_env() -> Self {
        let budget = std::env::var("ENVMILL_SPIN_BUDGET")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(10_000);
        SpinCfg { budget }
    }
}

/// One busy-wait iteration; `spins` counts iterations so far.
#[inline]
pub fn spin_step(spins: &mut u32, cfg: SpinCfg) {
    if *spins < cfg.budget {
        *spins += 1;
        std::hint::spin_loop();
    } else {
        std::thread::yield_now();
    }
}

/// Per-episode aggregate tagged with the slot that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotStats {
    pub slot: usize,
    pub stats: EpisodeStats,
}

/// Step every environment of one worker against the shared action region,
/// writing results into the shared result regions.
pub(crate) fn cycle_step(
    shared: &SharedBufferSet,
    envs: &mut [EmulatedEnv<BoxEnv>],
    first_slot: usize,
    sink: &mut dyn FnMut(SlotStats),
) -> Result<(), String> {
    let a = shared.layout.max_agents;
    let c = shared.layout.action_components;
    for (i, env) in envs.iter_mut().enumerate() {
        let slot = first_slot + i;
        // SAFETY: this worker owns its slots' cells between ACTIONS_READY
        // and OBS_READY; regions for distinct slots are disjoint.
        let (actions, bufs) = unsafe {
            (
                shared.i32s(shared.actions_slot_offset(slot), a * c),
                slot_buffers(shared, slot),
            )
        };
        let infos = env
            .step_into(actions, bufs)
            .map_err(|e| format!("slot {slot}: {e}"))?;
        for stats in infos {
            sink(SlotStats { slot, stats });
        }
    }
    Ok(())
}

/// Reset every environment of one worker; slot `k` receives `base_seed + k`.
pub(crate) fn cycle_reset(
    shared: &SharedBufferSet,
    envs: &mut [EmulatedEnv<BoxEnv>],
    first_slot: usize,
    base_seed: u64,
) -> Result<(), String> {
    for (i, env) in envs.iter_mut().enumerate() {
        let slot = first_slot + i;
        // SAFETY: as in cycle_step.
        let bufs = unsafe { slot_buffers(shared, slot) };
        env.reset_into(base_seed.wrapping_add(slot as u64), bufs)
            .map_err(|e| format!("slot {slot}: {e}"))?;
    }
    Ok(())
}

unsafe fn slot_buffers(shared: &SharedBufferSet, slot: usize) -> StepBuffers<'_> {
    let a = shared.layout.max_agents;
    StepBuffers {
        obs: shared.bytes_mut(shared.obs_slot_offset(slot), shared.layout.obs_slot_bytes()),
        rewards: shared.f32s_mut(shared.rewards_slot_offset(slot), a),
        terminals: shared.bytes_mut(shared.terminals_slot_offset(slot), a),
        truncations: shared.bytes_mut(shared.truncations_slot_offset(slot), a),
        masks: shared.bytes_mut(shared.masks_slot_offset(slot), a),
    }
}

/// Build and wrap this worker's environments, checking that their emitted
/// dimensions match the shared layout (the factory contract requires
/// identical spaces across slots).
pub(crate) fn build_envs(
    factory: &EnvFactory,
    first_slot: usize,
    count: usize,
    construct_seed_base: u64,
    shared: &SharedBufferSet,
) -> Result<Vec<EmulatedEnv<BoxEnv>>, String> {
    let mut envs = Vec::with_capacity(count);
    for i in 0..count {
        let slot = first_slot + i;
        let env = factory(construct_seed_base.wrapping_add(slot as u64));
        let w = wrap(env).map_err(|e| format!("slot {slot}: {e}"))?;
        if w.obs_layout().total_bytes != shared.layout.obs_bytes
            || w.max_agents() != shared.layout.max_agents
            || w.action_components() != shared.layout.action_components
        {
            return Err(format!(
                "slot {slot}: environment dimensions differ from the pool's"
            ));
        }
        envs.push(w);
    }
    Ok(envs)
}

pub(crate) struct WorkerCtx {
    pub idx: usize,
    pub first_slot: usize,
    pub env_count: usize,
    pub construct_seed_base: u64,
    pub shared: Arc<SharedBufferSet>,
    pub factory: EnvFactory,
    pub info_tx: SyncSender<SlotStats>,
    pub epoch: Instant,
    pub spin: SpinCfg,
}

/// Worker thread entry point. Busy-waits on the shared flag, steps or resets
/// its environments on command, and publishes `OBS_READY`. Any panic or
/// environment error parks the flag at `DEAD` with a note for the
/// controller.
pub(crate) fn worker_main(ctx: WorkerCtx) {
    let _guard = WorkerGuard::enter();
    let shared = Arc::clone(&ctx.shared);
    let idx = ctx.idx;
    let outcome = catch_unwind(AssertUnwindSafe(|| run_worker(ctx)));
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(msg)) => {
            shared.note_death(msg);
            shared.flag(idx).store(FLAG_DEAD, Ordering::Release);
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".to_string());
            shared.note_death(format!("worker {idx} panicked: {msg}"));
            shared.flag(idx).store(FLAG_DEAD, Ordering::Release);
        }
    }
}

fn run_worker(ctx: WorkerCtx) -> Result<(), String> {
    let shared = &*ctx.shared;
    let mut envs = build_envs(
        &ctx.factory,
        ctx.first_slot,
        ctx.env_count,
        ctx.construct_seed_base,
        shared,
    )?;
    let flag = shared.flag(ctx.idx);
    let heartbeat = shared.heartbeat(ctx.idx);
    let mut sink = |s: SlotStats| {
        // The controller drains on every recv; a send only fails when the
        // controller is gone, in which case the exit flag follows shortly.
        let _ = ctx.info_tx.send(s);
    };
    loop {
        let mut spins = 0u32;
        let cmd = loop {
            match flag.load(Ordering::Acquire) {
                cmd @ (FLAG_ACTIONS_READY | FLAG_RESET | FLAG_EXIT) => break cmd,
                _ => spin_step(&mut spins, ctx.spin),
            }
        };
        if cmd == FLAG_EXIT {
            return Ok(());
        }
        flag.store(FLAG_STEPPING, Ordering::Relaxed);
        heartbeat.store(ctx.epoch.elapsed().as_nanos() as u64, Ordering::Relaxed);
        let result = if cmd == FLAG_RESET {
            cycle_reset(shared, &mut envs, ctx.first_slot, shared.reset_seed())
        } else {
            cycle_step(shared, &mut envs, ctx.first_slot, &mut sink)
        };
        result?;
        heartbeat.store(ctx.epoch.elapsed().as_nanos() as u64, Ordering::Relaxed);
        // EXIT may have arrived while stepping; never clobber it.
        if flag
            .compare_exchange(
                FLAG_STEPPING,
                FLAG_OBS_READY,
                Ordering::Release,
                Ordering::Acquire,
            )
            .is_err()
        {
            return Ok(());
        }
    }
}
