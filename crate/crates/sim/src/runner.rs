//! Drives a trace through an engine and measures the post-warm-up window.

use face_core::device::{IoCounters, StatsRecord};
use face_core::meta::RecoveryStats;
use face_core::{Engine, EngineConfig, EngineCounters, EngineError, Lsn, Storage};
use serde::Serialize;
use thiserror::Error;

use crate::trace::{OpKind, SpecError, TraceGen, WorkloadSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("database of {spec} pages in the workload but {config} in the engine")]
    DbMismatch { spec: u64, config: u64 },
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub policy: String,
    pub sync: String,
    pub flash_frames: u32,
    pub dram_frames: usize,
    pub seed: u64,
    pub warmup_ops: u64,
    pub measured_ops: u64,
    pub dram_hit_rate: f64,
    /// Flash hits over DRAM misses.
    pub flash_hit_rate: f64,
    /// 1 - disk writes / dirty DRAM evictions.
    pub write_reduction: f64,
    pub stats: StatsRecord,
    /// Measured operations per simulated second.
    pub sim_tput: f64,
    pub counters: EngineCounters,
    /// Reads that returned something other than the latest write.
    pub freshness_violations: u64,
    pub recovery: Option<RecoveryStats>,
}

/// Warm-up prefix length: enough operations to cycle the whole cache
/// hierarchy a few times over before measuring.
pub fn warmup_ops(cfg: &EngineConfig) -> u64 {
    4 * (cfg.flash_frames as u64 + cfg.dram_frames as u64)
}

/// Latest lsn of every page, checked on each read.
#[derive(Debug, Clone)]
pub struct Shadow {
    latest: Vec<Lsn>,
    pub violations: u64,
    pub first_violation: Option<String>,
}

impl Shadow {
    pub fn new(db_pages: u64) -> Shadow {
        Shadow {
            latest: vec![Lsn::ZERO; db_pages as usize],
            violations: 0,
            first_violation: None,
        }
    }

    pub fn latest(&self, page: face_core::PageId) -> Lsn {
        self.latest[page.0 as usize]
    }

    pub fn wrote(&mut self, page: face_core::PageId, lsn: Lsn) {
        self.latest[page.0 as usize] = lsn;
    }

    pub fn read(&mut self, page: face_core::PageId, lsn: Lsn) {
        let want = self.latest[page.0 as usize];
        if lsn != want {
            self.violations += 1;
            self.first_violation
                .get_or_insert_with(|| format!("{page} read {lsn}, latest is {want}"));
        }
    }
}

/// One engine plus its trace position, the checkpoint cadence and the
/// freshness shadow.
pub struct Driver {
    pub engine: Engine,
    pub trace: TraceGen,
    pub shadow: Shadow,
    pub ops_done: u64,
    checkpoint_interval: u64,
}

impl Driver {
    pub fn new(spec: &WorkloadSpec, cfg: &EngineConfig, storage: Storage) -> Result<Driver> {
        if spec.db_pages != cfg.db_pages {
            return Err(SimError::DbMismatch {
                spec: spec.db_pages,
                config: cfg.db_pages,
            });
        }
        let trace = spec.generator()?;
        let engine = Engine::create(cfg.clone(), storage)?;
        Ok(Driver {
            engine,
            trace,
            shadow: Shadow::new(spec.db_pages),
            ops_done: 0,
            checkpoint_interval: spec.checkpoint_interval,
        })
    }

    /// Executes the next trace operation, then a checkpoint if one is due.
    pub fn step(&mut self) -> Result<()> {
        let op = self.trace.next().expect("endless trace");
        match op.kind {
            OpKind::Read => {
                let a = self.engine.read(op.page)?;
                self.shadow.read(op.page, a.lsn);
            }
            OpKind::Write => {
                let a = self.engine.write(op.page)?;
                self.shadow.wrote(op.page, a.lsn);
            }
        }
        self.ops_done += 1;
        if self.checkpoint_interval > 0 && self.ops_done.is_multiple_of(self.checkpoint_interval) {
            self.engine.checkpoint()?;
        }
        Ok(())
    }

    pub fn steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }
}

/// Window of engine activity between two snapshots.
pub struct Window {
    counters: EngineCounters,
    io: IoCounters,
}

impl Window {
    pub fn open(e: &Engine) -> Window {
        Window {
            counters: e.counters(),
            io: e.cost().counters(),
        }
    }

    pub fn close(&self, e: &Engine) -> (EngineCounters, StatsRecord) {
        let c = e.counters().since(&self.counters);
        let io = e.cost().counters().since(&self.io);
        (c, io.report(e.cost().clock_model()))
    }
}

pub fn result_from(
    cfg: &EngineConfig,
    spec: &WorkloadSpec,
    warmup: u64,
    counters: EngineCounters,
    stats: StatsRecord,
    violations: u64,
) -> RunResult {
    let ops = spec.op_count;
    RunResult {
        policy: policy_label(cfg),
        sync: cfg.sync.name().to_string(),
        flash_frames: cfg.flash_frames,
        dram_frames: cfg.dram_frames,
        seed: spec.seed,
        warmup_ops: warmup,
        measured_ops: ops,
        dram_hit_rate: counters.dram_hit_rate(),
        flash_hit_rate: counters.flash_hit_rate(),
        write_reduction: counters.write_reduction(),
        sim_tput: if stats.simulated_secs > 0.0 {
            ops as f64 / stats.simulated_secs
        } else {
            0.0
        },
        stats,
        counters,
        freshness_violations: violations,
        recovery: None,
    }
}

/// Row label: the replacement policy, or `none` without a flash tier.
pub fn policy_label(cfg: &EngineConfig) -> String {
    if cfg.has_flash() {
        cfg.replacement.name().to_string()
    } else {
        "none".to_string()
    }
}

/// Runs warm-up plus `spec.op_count` measured operations.
pub fn run(spec: &WorkloadSpec, cfg: &EngineConfig, storage: Storage) -> Result<RunResult> {
    let mut d = Driver::new(spec, cfg, storage)?;
    let warmup = warmup_ops(cfg);
    d.steps(warmup)?;
    let w = Window::open(&d.engine);
    d.steps(spec.op_count)?;
    let (counters, stats) = w.close(&d.engine);
    Ok(result_from(cfg, spec, warmup, counters, stats, d.shadow.violations))
}

/// Engine settings implied by a workload: database size and segment size.
pub fn config_for(spec: &WorkloadSpec, base: &EngineConfig) -> EngineConfig {
    EngineConfig {
        db_pages: spec.db_pages,
        seg_cap: spec.seg_cap.or(base.seg_cap),
        ..base.clone()
    }
}
