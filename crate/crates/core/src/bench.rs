//! Throughput/overhead benchmarking over synthetic and sanity environments,
//! with CSV and JSON report output.

use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autotune::run_timed;
use crate::emulation::wrap;
use crate::env::{AgentId, EnvFactory};
use crate::error::{Error, Result};
use crate::ocean::{make_ocean_env, OceanEnvConfig};
use crate::space::{ActionCodec, StructValue};
use crate::synth::{synthetic_factory, SyntheticEnvProfile};
use crate::vector::{Backend, CodePath, VecConfig};

/// A benchmarkable workload: a synthetic profile or a sanity environment,
/// loadable from one JSON config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Synthetic(SyntheticEnvProfile),
    Ocean { config: OceanEnvConfig },
}

impl ProfileSpec {
    pub fn name(&self) -> String {
        match self {
            ProfileSpec::Synthetic(p) => p.name.clone(),
            ProfileSpec::Ocean { config } => config.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProfileSpec::Synthetic(p) => p.validate(),
            ProfileSpec::Ocean { config } => config.validate(),
        }
    }

    pub fn factory(&self) -> Result<EnvFactory> {
        self.validate()?;
        Ok(match self {
            ProfileSpec::Synthetic(p) => synthetic_factory(p.clone()),
            ProfileSpec::Ocean { config } => {
                let config = config.clone();
                crate::env::factory(move |_seed| {
                    make_ocean_env(&config).expect("validated config")
                })
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ProfileSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One profile × config measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub profile: String,
    pub backend: Backend,
    pub workers: usize,
    pub envs_per_worker: usize,
    pub batch: usize,
    pub code_path: CodePath,
    /// Environment steps per second.
    pub sps: f64,
    /// Reset time as a percentage of total simulated time.
    pub pct_reset: f64,
    /// Coefficient of variation of the step time (std/mean; can exceed 1).
    pub step_cv: f64,
    /// Single-env emulation overhead: (wrapped - raw) / raw step time, %.
    pub pct_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Raw vs wrapped single-environment step cost, measured over `steps` steps
/// with a zero action. Returns (raw, wrapped) mean per-step durations.
pub fn measure_emulation_overhead(
    factory: &EnvFactory,
    steps: u64,
) -> Result<(Duration, Duration)> {
    // Raw loop: drive the bare environment with a canonical zero action.
    let mut env = factory(0);
    let codec = ActionCodec::new(env.action_space())?;
    let zero = codec.decode(&vec![0i32; codec.spec().num_components()])?;
    let mut live: Vec<AgentId> = env.reset(0).into_iter().map(|a| a.agent).collect();
    let raw_started = Instant::now();
    for _ in 0..steps {
        let actions: Vec<(AgentId, StructValue)> =
            live.iter().map(|&id| (id, zero.clone())).collect();
        let results = env.step(&actions);
        if results.iter().all(|r| r.terminal || r.truncation) {
            live = env.reset(0).into_iter().map(|a| a.agent).collect();
        } else {
            live = results
                .iter()
                .filter(|r| !r.terminal && !r.truncation)
                .map(|r| r.agent)
                .collect();
        }
    }
    let raw = raw_started.elapsed() / steps as u32;

    // Wrapped loop: same environment behind the emulation layer.
    let mut wrapped = wrap(factory(0))?;
    let zeros = vec![0i32; wrapped.max_agents() * wrapped.action_components()];
    wrapped.reset(0)?;
    let wrapped_started = Instant::now();
    for _ in 0..steps {
        wrapped.step(&zeros)?;
    }
    let wrapped_time = wrapped_started.elapsed() / steps as u32;
    Ok((raw, wrapped_time))
}

fn overhead_pct(raw: Duration, wrapped: Duration) -> f64 {
    let raw_ns = raw.as_nanos().max(1) as f64;
    (wrapped.as_nanos() as f64 - raw_ns) / raw_ns * 100.0
}

/// Derive %reset and step-time CV from the episode aggregates collected
/// during a run. Environments that do not emit timing infos report zeros.
fn timing_stats(infos: &[crate::vector::SlotStats]) -> (f64, f64) {
    let mut total_steps = 0.0;
    let mut sum_us = 0.0;
    let mut sum_sq = 0.0;
    let mut reset_us = 0.0;
    for s in infos {
        let len = s.stats.episode_length();
        if let Some(mean) = s.stats.values.get("step_us") {
            total_steps += len;
            sum_us += mean * len;
            sum_sq += s.stats.values.get("step_us_sq").copied().unwrap_or(0.0) * len;
        }
        reset_us += s.stats.values.get("reset_us").copied().unwrap_or(0.0);
    }
    if total_steps == 0.0 {
        return (0.0, 0.0);
    }
    let mean = sum_us / total_steps;
    let var = (sum_sq / total_steps - mean * mean).max(0.0);
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    let total_time = sum_us + reset_us;
    let pct_reset = if total_time > 0.0 {
        reset_us / total_time * 100.0
    } else {
        0.0
    };
    (pct_reset, cv)
}

/// Measure every profile × config pair for `duration` each.
pub fn run_benchmark(
    profiles: &[ProfileSpec],
    configs: &[VecConfig],
    duration: Duration,
) -> Result<BenchReport> {
    if profiles.is_empty() || configs.is_empty() {
        return Err(Error::ConfigInvalid(
            "benchmark needs at least one profile and one config".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for profile in profiles {
        let factory = profile.factory()?;
        // Size the overhead loop to the profile's step cost.
        let overhead_steps = match profile {
            ProfileSpec::Synthetic(p) if p.step_time_mean_us > 0.0 => {
                ((200_000.0 / p.step_time_mean_us) as u64).clamp(100, 20_000)
            }
            _ => 20_000,
        };
        let (raw, wrapped) = measure_emulation_overhead(&factory, overhead_steps)?;
        let pct_overhead = overhead_pct(raw, wrapped);
        for cfg in configs {
            let path = cfg.validate()?;
            let m = run_timed(&factory, cfg, duration, 2)?;
            let (pct_reset, step_cv) = timing_stats(&m.infos);
            rows.push(BenchRow {
                profile: profile.name(),
                backend: cfg.backend,
                workers: cfg.num_workers,
                envs_per_worker: cfg.envs_per_worker,
                batch: cfg.batch_size,
                code_path: path,
                sps: m.sps,
                pct_reset,
                step_cv,
                pct_overhead,
            });
        }
    }
    Ok(BenchReport { rows })
}

pub const CSV_HEADER: &str =
    "profile,backend,workers,envs_per_worker,batch,code_path,sps,pct_reset,step_cv,pct_overhead";

fn backend_str(b: Backend) -> &'static str {
    match b {
        Backend::Serial => "serial",
        Backend::Shared => "shared",
    }
}

fn backend_from(s: &str) -> Result<Backend> {
    match s {
        "serial" => Ok(Backend::Serial),
        "shared" => Ok(Backend::Shared),
        other => Err(Error::ConfigInvalid(format!("unknown backend {other:?}"))),
    }
}

fn path_str(p: CodePath) -> &'static str {
    match p {
        CodePath::Synchronous => "synchronous",
        CodePath::AsyncCopy => "async_copy",
        CodePath::AsyncWholeWorker => "async_whole_worker",
        CodePath::ZeroCopy => "zero_copy",
    }
}

fn path_from(s: &str) -> Result<CodePath> {
    match s {
        "synchronous" => Ok(CodePath::Synchronous),
        "async_copy" => Ok(CodePath::AsyncCopy),
        "async_whole_worker" => Ok(CodePath::AsyncWholeWorker),
        "zero_copy" => Ok(CodePath::ZeroCopy),
        other => Err(Error::ConfigInvalid(format!("unknown code path {other:?}"))),
    }
}

/// Write the report as CSV at `path` plus a JSON mirror alongside it
/// (same stem, `.json` extension). Rows are written in deterministic order:
/// by profile, then topology. Float fields use Rust's shortest
/// round-trippable formatting, so `read_report(write_report(r)) == r`.
pub fn write_report(report: &BenchReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::ConfigInvalid(
            "refusing to write an empty benchmark report".to_string(),
        ));
    }
    let mut rows = report.rows.clone();
    rows.sort_by(|a, b| {
        (&a.profile, a.workers, a.envs_per_worker, a.batch, path_str(a.code_path)).cmp(&(
            &b.profile,
            b.workers,
            b.envs_per_worker,
            b.batch,
            path_str(b.code_path),
        ))
    });
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        if r.profile.contains(',') || r.profile.contains('\n') {
            return Err(Error::ConfigInvalid(format!(
                "profile name {:?} not representable in CSV",
                r.profile
            )));
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.profile,
            backend_str(r.backend),
            r.workers,
            r.envs_per_worker,
            r.batch,
            path_str(r.code_path),
            r.sps,
            r.pct_reset,
            r.step_cv,
            r.pct_overhead
        ));
    }
    std::fs::write(path, csv)?;
    let sorted = BenchReport { rows };
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sorted)?,
    )?;
    Ok(())
}

/// Parse a CSV report written by [`write_report`].
pub fn read_report(path: &Path) -> Result<BenchReport> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::ConfigInvalid(format!(
                "bad report header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::ConfigInvalid(format!(
                "row {} has {} fields, expected 10",
                i + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            f64::from_str(s)
                .map_err(|e| Error::ConfigInvalid(format!("row {}: {e}", i + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            usize::from_str(s)
                .map_err(|e| Error::ConfigInvalid(format!("row {}: {e}", i + 2)))
        };
        rows.push(BenchRow {
            profile: fields[0].to_string(),
            backend: backend_from(fields[1])?,
            workers: int(fields[2])?,
            envs_per_worker: int(fields[3])?,
            batch: int(fields[4])?,
            code_path: path_from(fields[5])?,
            sps: num(fields[6])?,
            pct_reset: num(fields[7])?,
            step_cv: num(fields[8])?,
            pct_overhead: num(fields[9])?,
        });
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> BenchReport {
        BenchReport {
            rows: vec![
                BenchRow {
                    profile: "zero_work".to_string(),
                    backend: Backend::Serial,
                    workers: 1,
                    envs_per_worker: 2,
                    batch: 2,
                    code_path: CodePath::Synchronous,
                    sps: 123456.789,
                    pct_reset: 1.5,
                    step_cv: 0.25,
                    pct_overhead: 37.5,
                },
                BenchRow {
                    profile: "slow_reset".to_string(),
                    backend: Backend::Shared,
                    workers: 2,
                    envs_per_worker: 4,
                    batch: 4,
                    code_path: CodePath::AsyncCopy,
                    sps: 0.1 + 0.2, // deliberately non-representable decimal
                    pct_reset: 23.722,
                    step_cv: 1.06,
                    pct_overhead: 0.08,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let report = sample_report();
        write_report(&report, &path).unwrap();
        let back = read_report(&path).unwrap();
        // Rows come back sorted; compare as sets keyed by profile.
        assert_eq!(back.rows.len(), report.rows.len());
        for row in &report.rows {
            assert!(back.rows.contains(row), "missing row {row:?}");
        }
        // JSON mirror exists and parses to the same rows.
        let json = std::fs::read_to_string(path.with_extension("json")).unwrap();
        let mirrored: BenchReport = serde_json::from_str(&json).unwrap();
        assert_eq!(mirrored.rows.len(), report.rows.len());
    }

    #[test]
    fn header_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report(&sample_report(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "profile,backend,workers,envs_per_worker,batch,code_path,sps,pct_reset,step_cv,pct_overhead\n"
        ));
    }

    #[test]
    fn empty_report_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let err = write_report(&BenchReport { rows: vec![] }, &path).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(_)));
    }

    #[test]
    fn zero_work_overhead_is_under_the_bound() {
        let factory = synthetic_factory(SyntheticEnvProfile::zero_work());
        let (raw, wrapped) = measure_emulation_overhead(&factory, 20_000).unwrap();
        let added = wrapped.saturating_sub(raw);
        assert!(
            added < Duration::from_micros(100),
            "emulation added {added:?} per step"
        );
    }

    #[test]
    fn profile_spec_loads_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let synth_path = dir.path().join("synth.json");
        std::fs::write(
            &synth_path,
            serde_json::to_string(&ProfileSpec::Synthetic(SyntheticEnvProfile::zero_work()))
                .unwrap(),
        )
        .unwrap();
        let loaded = ProfileSpec::load(&synth_path).unwrap();
        assert_eq!(loaded.name(), "zero_work");

        let ocean_path = dir.path().join("ocean.json");
        std::fs::write(
            &ocean_path,
            r#"{"kind":"ocean","config":{"env":"bandit","arm_probs":[0.2,0.8]}}"#,
        )
        .unwrap();
        let loaded = ProfileSpec::load(&ocean_path).unwrap();
        assert_eq!(loaded.name(), "bandit");
        loaded.factory().unwrap();
    }

    #[test]
    fn benchmark_produces_rows_with_timing_stats() {
        let mut profile = SyntheticEnvProfile::zero_work();
        profile.name = "tiny".to_string();
        profile.episode_length = 8;
        profile.step_time_mean_us = 20.0;
        profile.reset_time_us = 100.0;
        let profiles = [ProfileSpec::Synthetic(profile)];
        let configs = [VecConfig::new(Backend::Serial, 1, 2, 2)];
        let report =
            run_benchmark(&profiles, &configs, Duration::from_millis(300)).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!(row.sps > 0.0);
        // 100us reset per 8 steps of ~20us: a visible reset share.
        assert!(row.pct_reset > 5.0, "pct_reset {}", row.pct_reset);
        assert!(row.step_cv >= 0.0);
    }
}
