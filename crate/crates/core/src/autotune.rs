//! Empirical search over valid vectorization configs for the fastest on the
//! current machine. Obtaining the best configuration for an environment and
//! host requires measuring all four code paths; configs run strictly
//! sequentially so measurements do not contend.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::EnvFactory;
use crate::error::{Error, Result};
use crate::vector::{open_vectorized, Backend, SlotStats, VecConfig};

/// Search space and measurement budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConstraints {
    pub max_workers: usize,
    /// The batch size N every candidate must serve.
    pub target_batch_size: usize,
    /// Upper bound on total environments M.
    pub total_env_budget: usize,
    pub min_envs_per_worker: usize,
    pub max_envs_per_worker: usize,
    /// Per-config timed window in seconds; must be >= 1 to dominate timer
    /// noise.
    pub measure_duration_s: f64,
    /// Warmup in full pool cycles before the timed window (populates caches
    /// and runs the first-batch shape checks outside the measurement).
    pub warmup_pool_cycles: usize,
}

impl TuneConstraints {
    pub fn new(max_workers: usize, target_batch_size: usize, total_env_budget: usize) -> Self {
        TuneConstraints {
            max_workers,
            target_batch_size,
            total_env_budget,
            min_envs_per_worker: 1,
            max_envs_per_worker: 4,
            measure_duration_s: 1.0,
            warmup_pool_cycles: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_workers < 1
            || self.target_batch_size < 1
            || self.total_env_budget < 1
            || self.min_envs_per_worker < 1
            || self.max_envs_per_worker < self.min_envs_per_worker
            || self.warmup_pool_cycles < 1
        {
            return Err(Error::ConfigInvalid(
                "tuning constraints must all be positive".to_string(),
            ));
        }
        if self.measure_duration_s < 1.0 {
            return Err(Error::ConfigInvalid(
                "measurement duration must be >= 1s".to_string(),
            ));
        }
        Ok(())
    }
}

/// One measured candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: VecConfig,
    pub sps: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub cores: usize,
    pub timestamp_unix: u64,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

/// Ranked measurements, fastest first; `chosen` is the ranking's head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub machine: MachineInfo,
    pub constraints: TuneConstraints,
    pub results: Vec<TuneResult>,
    pub chosen: TuneResult,
}

/// Every shared-backend config within the constraints that passes
/// [`VecConfig::validate`], zero-copy variants included where alignment
/// holds. Deterministic order: ascending (workers, envs per worker,
/// zero-copy).
pub fn enumerate_configs(c: &TuneConstraints) -> Result<Vec<VecConfig>> {
    c.validate()?;
    let mut out = Vec::new();
    for w in 1..=c.max_workers {
        for e in c.min_envs_per_worker..=c.max_envs_per_worker {
            let m = w * e;
            if m > c.total_env_budget || c.target_batch_size > m {
                continue;
            }
            let base = VecConfig::new(Backend::Shared, w, e, c.target_batch_size);
            if base.validate().is_ok() {
                out.push(base.clone());
            }
            let zc = base.with_zero_copy();
            if matches!(zc.validate(), Ok(crate::vector::CodePath::ZeroCopy)) {
                out.push(zc);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidConfig);
    }
    Ok(out)
}

/// Raw samples from one timed run.
pub(crate) struct Measurement {
    pub sps: f64,
    pub cycles: u64,
    pub recv_latencies_us: Vec<f64>,
    pub infos: Vec<SlotStats>,
}

/// Drive a pool with a no-op (zero) action policy for `duration`, counting
/// environment steps (slot appearances) and recv latencies.
pub(crate) fn run_timed(
    factory: &EnvFactory,
    cfg: &VecConfig,
    duration: Duration,
    warmup_pool_cycles: usize,
) -> Result<Measurement> {
    let mut handle = open_vectorized(factory.clone(), cfg)?;
    handle.async_reset(cfg.seed_base)?;
    let zeros = vec![0i32; cfg.batch_size * handle.max_agents() * handle.action_components()];
    let pool_cycle = cfg.total_envs().div_ceil(cfg.batch_size);

    for _ in 0..warmup_pool_cycles * pool_cycle {
        let batch = handle.recv()?;
        let ids = batch.slot_ids.clone();
        drop(batch);
        handle.send(&ids, &zeros[..ids.len() * handle.max_agents() * handle.action_components()])?;
    }

    let mut steps = 0u64;
    let mut cycles = 0u64;
    let mut latencies = Vec::new();
    let mut infos = Vec::new();
    let started = Instant::now();
    while started.elapsed() < duration {
        let t0 = Instant::now();
        let mut batch = handle.recv()?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e6);
        steps += batch.slot_ids.len() as u64;
        cycles += 1;
        infos.append(&mut batch.infos);
        let ids = batch.slot_ids.clone();
        drop(batch);
        handle.send(&ids, &zeros[..ids.len() * handle.max_agents() * handle.action_components()])?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    handle.close();

    Ok(Measurement {
        sps: steps as f64 / elapsed,
        cycles,
        recv_latencies_us: latencies,
        infos,
    })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Measure one config: steps/sec plus recv latency percentiles. The
/// environment is fully closed afterwards. Fails with
/// `MeasurementTooShort` when fewer than 100 recv cycles complete.
pub fn measure_config(
    factory: &EnvFactory,
    cfg: &VecConfig,
    duration: Duration,
) -> Result<TuneResult> {
    cfg.validate()?;
    let m = run_timed(factory, cfg, duration, 2)?;
    if m.cycles < 100 {
        return Err(Error::MeasurementTooShort { cycles: m.cycles });
    }
    let mut lat = m.recv_latencies_us;
    lat.sort_by(|a, b| a.total_cmp(b));
    Ok(TuneResult {
        config: cfg.clone(),
        sps: m.sps,
        p50_us: percentile(&lat, 0.50),
        p99_us: percentile(&lat, 0.99),
    })
}

/// Benchmark every valid config and return the ranking (strictly descending
/// steps/sec; the chosen config is the head).
pub fn autotune(factory: &EnvFactory, constraints: &TuneConstraints) -> Result<TuneReport> {
    let configs = enumerate_configs(constraints)?;
    let duration = Duration::from_secs_f64(constraints.measure_duration_s);
    let mut results = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let mut r = measure_config(factory, cfg, duration)?;
        // Ranking is by speed alone; latency is informational.
        if !r.sps.is_finite() || r.sps <= 0.0 {
            r.sps = 0.0;
        }
        results.push(r);
    }
    results.sort_by(|a, b| b.sps.total_cmp(&a.sps));
    let chosen = results[0].clone();
    Ok(TuneReport {
        machine: MachineInfo::current(),
        constraints: constraints.clone(),
        results,
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_factory, SyntheticEnvProfile};
    use crate::vector::CodePath;

    #[test]
    fn enumeration_matches_hand_list() {
        let mut c = TuneConstraints::new(4, 4, 8);
        c.max_envs_per_worker = 2;
        let configs = enumerate_configs(&c).unwrap();
        let summary: Vec<(usize, usize, bool, CodePath)> = configs
            .iter()
            .map(|c| {
                (
                    c.num_workers,
                    c.envs_per_worker,
                    c.zero_copy,
                    c.validate().unwrap(),
                )
            })
            .collect();
        assert_eq!(
            summary,
            vec![
                (2, 2, false, CodePath::Synchronous),
                (3, 2, false, CodePath::AsyncCopy),
                (4, 1, false, CodePath::Synchronous),
                (4, 2, false, CodePath::AsyncCopy),
                (4, 2, true, CodePath::ZeroCopy),
            ]
        );
    }

    #[test]
    fn infeasible_constraints_yield_no_valid_config() {
        let c = TuneConstraints::new(2, 16, 8);
        assert!(matches!(enumerate_configs(&c), Err(Error::NoValidConfig)));
    }

    #[test]
    fn every_enumerated_config_opens() {
        let mut c = TuneConstraints::new(3, 2, 6);
        c.max_envs_per_worker = 2;
        let factory = synthetic_factory(SyntheticEnvProfile::zero_work());
        for cfg in enumerate_configs(&c).unwrap() {
            let mut h = open_vectorized(factory.clone(), &cfg).unwrap();
            h.async_reset(0).unwrap();
            h.close();
        }
    }

    #[test]
    fn serial_zero_work_measurement_is_sane() {
        let factory = synthetic_factory(SyntheticEnvProfile::zero_work());
        let cfg = VecConfig::new(Backend::Serial, 1, 2, 2);
        let r = measure_config(&factory, &cfg, Duration::from_millis(300)).unwrap();
        assert!(r.sps > 0.0);
        assert!(r.p50_us <= r.p99_us);
    }

    #[test]
    fn too_short_measurement_is_rejected() {
        // 50ms steps cannot complete 100 cycles in a fraction of a second.
        let mut profile = SyntheticEnvProfile::zero_work();
        profile.step_time_mean_us = 50_000.0;
        let factory = synthetic_factory(profile);
        let cfg = VecConfig::new(Backend::Serial, 1, 1, 1);
        let err = measure_config(&factory, &cfg, Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, Error::MeasurementTooShort { .. }));
    }

    #[test]
    fn single_valid_config_is_chosen() {
        let mut c = TuneConstraints::new(1, 1, 1);
        c.max_envs_per_worker = 1;
        c.measure_duration_s = 1.0;
        let factory = synthetic_factory(SyntheticEnvProfile::zero_work());
        let report = autotune(&factory, &c).unwrap();
        assert_eq!(report.results.len(), 1);
        assert_eq!(report.chosen, report.results[0]);
        assert!(report.chosen.sps > 0.0);
        // Report serializes to JSON and back.
        let json = serde_json::to_string(&report).unwrap();
        let back: TuneReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
