//! Shared buffer regions underpinning vectorization.
//!
//! All step data lives in one contiguous allocation so external tools can
//! inspect live buffers. With `M` environment slots, `A = max_agents`,
//! `T = obs bytes per agent`, and `C = action components per agent`, the
//! layout is (all scalars little-endian, `align8(x)` = round up to 8):
//!
//! | region      | offset                                  | size          |
//! |-------------|-----------------------------------------|---------------|
//! | observations| 0                                       | `M*A*T` bytes |
//! | actions     | `align8(M*A*T)`                         | `M*A*C` i32   |
//! | rewards     | `actions_offset + 4*M*A*C`              | `M*A` f32     |
//! | terminals   | `rewards_offset + 4*M*A`                | `M*A` u8      |
//! | truncations | `terminals_offset + M*A`                | `M*A` u8      |
//! | masks       | `truncations_offset + M*A`              | `M*A` u8      |
//!
//! Each region orders cells by environment slot index, so any contiguous
//! range of slots maps to one contiguous byte range — that property is what
//! makes the zero-copy batch path possible.
//!
//! Exactly one side owns any cell at a time: a worker touches its slots only
//! between observing `ACTIONS_READY`/`RESET` and publishing `OBS_READY`; the
//! controller touches them only outside that window. Flag stores are
//! release, flag loads acquire, so data writes are visible once the flag
//! transition is observed.

use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker flag states.
pub const FLAG_IDLE: u32 = 0;
/// Controller has written actions for every slot of this worker.
pub const FLAG_ACTIONS_READY: u32 = 1;
/// Worker is stepping its environments.
pub const FLAG_STEPPING: u32 = 2;
/// Worker has published results for all its slots.
pub const FLAG_OBS_READY: u32 = 3;
/// Controller requests a reset of every slot on this worker.
pub const FLAG_RESET: u32 = 4;
/// Controller requests worker shutdown.
pub const FLAG_EXIT: u32 = 5;
/// Worker died (panic or contract failure); see the death note.
pub const FLAG_DEAD: u32 = 6;

static LIVE_REGIONS: AtomicUsize = AtomicUsize::new(0);
static LIVE_WORKERS: AtomicUsize = AtomicUsize::new(0);

/// Number of shared buffer sets currently allocated (teardown accounting).
pub fn live_shared_regions() -> usize {
    LIVE_REGIONS.load(Ordering::SeqCst)
}

/// Number of worker threads currently running (teardown accounting).
pub fn live_worker_threads() -> usize {
    LIVE_WORKERS.load(Ordering::SeqCst)
}

/// RAII guard bumping the live-worker count for a worker thread's lifetime.
pub(crate) struct WorkerGuard;

impl WorkerGuard {
    pub(crate) fn enter() -> Self {
        LIVE_WORKERS.fetch_add(1, Ordering::SeqCst);
        WorkerGuard
    }
}

impl Drop for WorkerGuard {
    fn drop(&mut self) {
        LIVE_WORKERS.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Byte offsets of every region, as documented in the module header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionLayout {
    pub slots: usize,
    pub max_agents: usize,
    pub obs_bytes: usize,
    pub action_components: usize,
    pub obs_offset: usize,
    pub actions_offset: usize,
    pub rewards_offset: usize,
    pub terminals_offset: usize,
    pub truncations_offset: usize,
    pub masks_offset: usize,
    pub total_bytes: usize,
}

const fn align8(x: usize) -> usize {
    (x + 7) & !7
}

impl RegionLayout {
    pub fn compute(
        slots: usize,
        max_agents: usize,
        obs_bytes: usize,
        action_components: usize,
    ) -> Self {
        let ma = slots * max_agents;
        let obs_offset = 0;
        let actions_offset = align8(ma * obs_bytes);
        let rewards_offset = actions_offset + 4 * ma * action_components;
        let terminals_offset = rewards_offset + 4 * ma;
        let truncations_offset = terminals_offset + ma;
        let masks_offset = truncations_offset + ma;
        let total_bytes = masks_offset + ma;
        RegionLayout {
            slots,
            max_agents,
            obs_bytes,
            action_components,
            obs_offset,
            actions_offset,
            rewards_offset,
            terminals_offset,
            truncations_offset,
            masks_offset,
            total_bytes,
        }
    }

    /// Bytes of one slot's observation rows (`A*T`).
    pub fn obs_slot_bytes(&self) -> usize {
        self.max_agents * self.obs_bytes
    }
}

/// Raw 64-byte-aligned allocation shared by the controller and workers.
struct RawRegion {
    ptr: NonNull<u8>,
    layout: Layout,
}

unsafe impl Send for RawRegion {}
unsafe impl Sync for RawRegion {}

impl RawRegion {
    fn new(len: usize) -> Self {
        let layout = Layout::from_size_align(len.max(1), 64).expect("region layout");
        // Zeroed so padded rows and untouched slots read as zero.
        let ptr = unsafe { alloc_zeroed(layout) };
        let ptr = NonNull::new(ptr).expect("region allocation failed");
        RawRegion { ptr, layout }
    }
}

impl Drop for RawRegion {
    fn drop(&mut self) {
        unsafe { dealloc(self.ptr.as_ptr(), self.layout) };
    }
}

/// The shared regions plus per-worker flags, heartbeats, and the reset seed.
pub struct SharedBufferSet {
    pub layout: RegionLayout,
    region: RawRegion,
    flags: Box<[AtomicU32]>,
    heartbeats: Box<[AtomicU64]>,
    reset_seed: AtomicU64,
    death_note: Mutex<Option<String>>,
}

impl SharedBufferSet {
    pub fn new(layout: RegionLayout, num_workers: usize) -> Self {
        let region = RawRegion::new(layout.total_bytes);
        let flags = (0..num_workers).map(|_| AtomicU32::new(FLAG_IDLE)).collect();
        let heartbeats = (0..num_workers).map(|_| AtomicU64::new(0)).collect();
        LIVE_REGIONS.fetch_add(1, Ordering::SeqCst);
        SharedBufferSet {
            layout,
            region,
            flags,
            heartbeats,
            reset_seed: AtomicU64::new(0),
            death_note: Mutex::new(None),
        }
    }

    pub fn flag(&self, worker: usize) -> &AtomicU32 {
        &self.flags[worker]
    }

    pub fn heartbeat(&self, worker: usize) -> &AtomicU64 {
        &self.heartbeats[worker]
    }

    pub fn set_reset_seed(&self, seed: u64) {
        self.reset_seed.store(seed, Ordering::Relaxed);
    }

    pub fn reset_seed(&self) -> u64 {
        self.reset_seed.load(Ordering::Relaxed)
    }

    pub fn note_death(&self, msg: String) {
        let mut note = self.death_note.lock().unwrap_or_else(|e| e.into_inner());
        note.get_or_insert(msg);
    }

    pub fn death_note(&self) -> String {
        self.death_note
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .unwrap_or_else(|| "worker terminated without a note".to_string())
    }

    /// # Safety
    ///
    /// The caller must hold cell ownership of `[off, off+len)` under the
    /// flag protocol (no concurrent writer).
    pub unsafe fn bytes(&self, off: usize, len: usize) -> &[u8] {
        debug_assert!(off + len <= self.layout.total_bytes);
        std::slice::from_raw_parts(self.region.ptr.as_ptr().add(off), len)
    }

    /// # Safety
    ///
    /// The caller must be the unique owner of `[off, off+len)` under the
    /// flag protocol (no concurrent reader or writer).
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn bytes_mut(&self, off: usize, len: usize) -> &mut [u8] {
        debug_assert!(off + len <= self.layout.total_bytes);
        std::slice::from_raw_parts_mut(self.region.ptr.as_ptr().add(off), len)
    }

    /// # Safety
    ///
    /// As [`Self::bytes`]; `off` must be 4-byte aligned.
    pub unsafe fn f32s(&self, off: usize, count: usize) -> &[f32] {
        debug_assert!(off % 4 == 0 && off + 4 * count <= self.layout.total_bytes);
        std::slice::from_raw_parts(self.region.ptr.as_ptr().add(off).cast::<f32>(), count)
    }

    /// # Safety
    ///
    /// As [`Self::bytes_mut`]; `off` must be 4-byte aligned.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn f32s_mut(&self, off: usize, count: usize) -> &mut [f32] {
        debug_assert!(off % 4 == 0 && off + 4 * count <= self.layout.total_bytes);
        std::slice::from_raw_parts_mut(self.region.ptr.as_ptr().add(off).cast::<f32>(), count)
    }

    /// # Safety
    ///
    /// As [`Self::bytes`]; `off` must be 4-byte aligned.
    pub unsafe fn i32s(&self, off: usize, count: usize) -> &[i32] {
        debug_assert!(off % 4 == 0 && off + 4 * count <= self.layout.total_bytes);
        std::slice::from_raw_parts(self.region.ptr.as_ptr().add(off).cast::<i32>(), count)
    }

    /// # Safety
    ///
    /// As [`Self::bytes_mut`]; `off` must be 4-byte aligned.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn i32s_mut(&self, off: usize, count: usize) -> &mut [i32] {
        debug_assert!(off % 4 == 0 && off + 4 * count <= self.layout.total_bytes);
        std::slice::from_raw_parts_mut(self.region.ptr.as_ptr().add(off).cast::<i32>(), count)
    }

    // Per-slot accessors. Offsets follow the documented layout exactly.

    pub fn obs_slot_offset(&self, slot: usize) -> usize {
        self.layout.obs_offset + slot * self.layout.obs_slot_bytes()
    }

    pub fn actions_slot_offset(&self, slot: usize) -> usize {
        self.layout.actions_offset
            + 4 * slot * self.layout.max_agents * self.layout.action_components
    }

    pub fn rewards_slot_offset(&self, slot: usize) -> usize {
        self.layout.rewards_offset + 4 * slot * self.layout.max_agents
    }

    pub fn terminals_slot_offset(&self, slot: usize) -> usize {
        self.layout.terminals_offset + slot * self.layout.max_agents
    }

    pub fn truncations_slot_offset(&self, slot: usize) -> usize {
        self.layout.truncations_offset + slot * self.layout.max_agents
    }

    pub fn masks_slot_offset(&self, slot: usize) -> usize {
        self.layout.masks_offset + slot * self.layout.max_agents
    }
}

impl Drop for SharedBufferSet {
    fn drop(&mut self) {
        LIVE_REGIONS.fetch_sub(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_packed_and_aligned() {
        let l = RegionLayout::compute(8, 2, 10, 3);
        assert_eq!(l.obs_offset, 0);
        assert_eq!(l.actions_offset, align8(8 * 2 * 10)); // 160, already aligned
        assert_eq!(l.actions_offset % 8, 0);
        assert_eq!(l.rewards_offset, l.actions_offset + 4 * 8 * 2 * 3);
        assert_eq!(l.rewards_offset % 4, 0);
        assert_eq!(l.terminals_offset, l.rewards_offset + 4 * 16);
        assert_eq!(l.truncations_offset, l.terminals_offset + 16);
        assert_eq!(l.masks_offset, l.truncations_offset + 16);
        assert_eq!(l.total_bytes, l.masks_offset + 16);
    }

    #[test]
    fn regions_start_zeroed() {
        let set = SharedBufferSet::new(RegionLayout::compute(2, 1, 16, 1), 1);
        let all = unsafe { set.bytes(0, set.layout.total_bytes) };
        assert!(all.iter().all(|&b| b == 0));
    }
}
