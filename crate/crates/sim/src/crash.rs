//! Crash-injection experiment.
//!
//! A flash-cached engine and a no-flash engine consume the same trace with
//! the same checkpoint cadence. At each crash point both lose their volatile
//! state (the flash engine's in-flight metadata flush lands as the chosen
//! fault dictates) and restart. Every page must then come back at the
//! newest version that had reached flash or disk. Recovery then re-reads
//! and re-applies every page written since the last checkpoint, standing in
//! for the host's log redo; its I/O time plus the directory restart time is
//! the recovery time.

use face_core::meta::{FlushFault, RecoveryStats};
use face_core::{Engine, EngineConfig, Lsn, PageId, Source, Storage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::runner::{warmup_ops, Result, Shadow, SimError};
use crate::trace::{OpKind, TraceGen, TraceOp, WorkloadSpec};

#[derive(Debug, Clone)]
pub struct CrashSpec {
    /// `checkpoint_interval` must be positive.
    pub workload: WorkloadSpec,
    pub engine: EngineConfig,
    pub crash_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrashPoint {
    pub index: usize,
    /// Trace operations executed before the crash.
    pub at_op: u64,
    /// What happened to the in-flight segment flush.
    pub fault: String,
    pub recovery: RecoveryStats,
    pub redo_pages: u64,
    pub redo_flash_reads: u64,
    pub redo_disk_reads: u64,
    /// Directory restart plus redo I/O, simulated seconds.
    pub recovery_secs: f64,
    /// Same for the no-flash engine.
    pub baseline_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrashReport {
    pub seg_cap: u32,
    pub points: Vec<CrashPoint>,
    /// Reads served after restarts, all checked against the shadow.
    pub verified_reads: u64,
}

impl CrashReport {
    pub fn max_pages_scanned(&self) -> u64 {
        self.points.iter().map(|p| p.recovery.pages_scanned).max().unwrap_or(0)
    }

    /// Share of redo reads served by flash over all crash points.
    pub fn flash_fraction(&self) -> f64 {
        let f: u64 = self.points.iter().map(|p| p.redo_flash_reads).sum();
        let d: u64 = self.points.iter().map(|p| p.redo_disk_reads).sum();
        if f + d == 0 {
            0.0
        } else {
            f as f64 / (f + d) as f64
        }
    }

    pub fn recovery_secs(&self) -> f64 {
        self.points.iter().map(|p| p.recovery_secs).sum()
    }

    pub fn baseline_secs(&self) -> f64 {
        self.points.iter().map(|p| p.baseline_secs).sum()
    }
}

/// One engine with its correctness bookkeeping.
struct Lane {
    cfg: EngineConfig,
    engine: Option<Engine>,
    shadow: Shadow,
    /// Newest lsn of each page known to have reached flash or disk.
    durable: Vec<Lsn>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Redo {
    pages: u64,
    flash: u64,
    disk: u64,
    secs: f64,
}

impl Lane {
    fn new(cfg: EngineConfig) -> Result<Lane> {
        let cfg = EngineConfig {
            track_durability: true,
            ..cfg
        };
        let engine = Engine::create(cfg.clone(), Storage::in_memory())?;
        Ok(Lane {
            shadow: Shadow::new(cfg.db_pages),
            durable: vec![Lsn::ZERO; cfg.db_pages as usize],
            engine: Some(engine),
            cfg,
        })
    }

    fn engine(&mut self) -> &mut Engine {
        self.engine.as_mut().expect("running")
    }

    fn absorb_durable(&mut self) {
        for (p, l) in self.engine().take_durable() {
            let d = &mut self.durable[p.0 as usize];
            *d = (*d).max(l);
        }
    }

    fn apply(&mut self, op: TraceOp) -> Result<()> {
        match op.kind {
            OpKind::Read => {
                let a = self.engine().read(op.page)?;
                self.shadow.read(op.page, a.lsn);
            }
            OpKind::Write => {
                let a = self.engine().write(op.page)?;
                self.shadow.wrote(op.page, a.lsn);
            }
        }
        self.absorb_durable();
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<()> {
        self.engine().checkpoint()?;
        self.absorb_durable();
        Ok(())
    }

    fn crash_and_restart(&mut self, fault: FlushFault) -> Result<RecoveryStats> {
        let storage = self.engine.take().expect("running").crash(fault)?;
        let (e, stats) = Engine::open(self.cfg.clone(), storage)?;
        self.engine = Some(e);
        let e = self.engine.as_ref().expect("running");
        for id in 0..self.cfg.db_pages {
            let got = e.peek_persistent(PageId(id))?;
            let want = self.durable[id as usize];
            if got != want {
                return Err(SimError::Verification(format!(
                    "after restart {} persists {got}, newest durable write was {want}",
                    PageId(id)
                )));
            }
            self.shadow.wrote(PageId(id), want);
        }
        Ok(stats)
    }

    /// Re-reads and rewrites `pages`; returns the redo I/O.
    fn redo(&mut self, pages: &[PageId]) -> Result<Redo> {
        let before = self.engine().cost().counters();
        let mut r = Redo::default();
        for &p in pages {
            let a = self.engine().read(p)?;
            self.shadow.read(p, a.lsn);
            match a.source {
                Source::Flash => r.flash += 1,
                Source::Disk => r.disk += 1,
                Source::Dram => {}
            }
            let w = self.engine().write(p)?;
            self.shadow.wrote(p, w.lsn);
            r.pages += 1;
        }
        self.absorb_durable();
        let e = self.engine();
        r.secs = e.cost().counters().since(&before).clock(e.cost().clock_model());
        Ok(r)
    }

    fn verify(&self) -> Result<()> {
        match &self.shadow.first_violation {
            Some(v) => Err(SimError::Verification(format!(
                "{} stale reads, first: {v}",
                self.shadow.violations
            ))),
            None => Ok(()),
        }
    }
}

struct Experiment {
    trace: TraceGen,
    face: Lane,
    base: Lane,
    ops: u64,
    interval: u64,
    /// Pages written since the last checkpoint, first-write order.
    wal: Vec<PageId>,
    in_wal: Vec<bool>,
}

impl Experiment {
    fn step(&mut self) -> Result<()> {
        let op = self.trace.next().expect("endless trace");
        self.face.apply(op)?;
        self.base.apply(op)?;
        if op.kind == OpKind::Write && !self.in_wal[op.page.0 as usize] {
            self.in_wal[op.page.0 as usize] = true;
            self.wal.push(op.page);
        }
        self.ops += 1;
        if self.ops.is_multiple_of(self.interval) {
            self.checkpoint()?;
        }
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<()> {
        self.face.checkpoint()?;
        self.base.checkpoint()?;
        for p in self.wal.drain(..) {
            self.in_wal[p.0 as usize] = false;
        }
        Ok(())
    }

    fn in_flight(&mut self) -> Option<usize> {
        self.face.engine().meta_log().and_then(|l| l.in_flight_len())
    }
}

pub fn run_crash_experiment(spec: &CrashSpec) -> Result<CrashReport> {
    let interval = spec.workload.checkpoint_interval;
    if interval == 0 {
        return Err(SimError::Verification(
            "crash experiment needs a checkpoint interval".into(),
        ));
    }
    let cfg = EngineConfig {
        db_pages: spec.workload.db_pages,
        seg_cap: spec.workload.seg_cap.or(spec.engine.seg_cap),
        ..spec.engine.clone()
    };
    let base_cfg = EngineConfig {
        flash_frames: 0,
        ..cfg.clone()
    };
    let mut x = Experiment {
        trace: spec.workload.generator()?,
        face: Lane::new(cfg.clone())?,
        base: Lane::new(base_cfg)?,
        ops: 0,
        interval,
        wal: Vec::new(),
        in_wal: vec![false; cfg.db_pages as usize],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(3);

    // warm up to a checkpoint boundary
    let warm = warmup_ops(&cfg).div_ceil(interval).max(1) * interval;
    while x.ops < warm {
        x.step()?;
    }

    let mut points = Vec::with_capacity(spec.crash_points);
    let mut verified_reads = 0u64;
    for index in 0..spec.crash_points {
        // first crash at the middle of an interval, the rest at random offsets
        let offset = if index == 0 {
            interval / 2
        } else {
            rng.random_range(1..interval.max(2))
        };
        let skip = if index == 0 { 0 } else { rng.random_range(0..2u64) };
        let target = (x.ops / interval + skip) * interval + offset;
        while x.ops < target {
            x.step()?;
        }
        let fault = match index % 3 {
            0 => FlushFault::Absent,
            1 => {
                // crash in the middle of a segment flush
                let mut budget = interval * 4;
                while x.in_flight().is_none() && budget > 0 {
                    x.step()?;
                    budget -= 1;
                }
                let n = x.in_flight().unwrap_or(1) as u32;
                FlushFault::Torn {
                    entries: rng.random_range(0..n.max(1)),
                }
            }
            _ => FlushFault::Persisted,
        };
        let label = match (x.in_flight(), fault) {
            (None, _) => "none".to_string(),
            (Some(_), FlushFault::Absent) => "absent".to_string(),
            (Some(n), FlushFault::Torn { entries }) => format!("torn-{entries}-of-{n}"),
            (Some(_), FlushFault::Persisted) => "persisted".to_string(),
        };
        let at_op = x.ops;
        let recovery = x.face.crash_and_restart(fault)?;
        let base_recovery = x.base.crash_and_restart(FlushFault::Absent)?;
        if recovery.pages_scanned > 2 * cfg.segment_capacity() as u64 {
            return Err(SimError::Verification(format!(
                "restart scanned {} pages, bound is {}",
                recovery.pages_scanned,
                2 * cfg.segment_capacity()
            )));
        }
        let wal = x.wal.clone();
        let face_redo = x.face.redo(&wal)?;
        let base_redo = x.base.redo(&wal)?;
        verified_reads += 2 * wal.len() as u64;
        points.push(CrashPoint {
            index,
            at_op,
            fault: label,
            recovery,
            redo_pages: face_redo.pages,
            redo_flash_reads: face_redo.flash,
            redo_disk_reads: face_redo.disk,
            recovery_secs: recovery.sim_secs + face_redo.secs,
            baseline_secs: base_recovery.sim_secs + base_redo.secs,
        });
        x.face.verify()?;
        x.base.verify()?;
    }
    // a stretch of normal operation after the last restart
    for _ in 0..interval {
        x.step()?;
    }
    verified_reads += interval;
    x.face.verify()?;
    x.base.verify()?;
    Ok(CrashReport {
        seg_cap: cfg.segment_capacity(),
        points,
        verified_reads,
    })
}

/// A crash before any operation: restart finds the freshly formatted
/// directory.
pub fn crash_before_any_op(cfg: &EngineConfig) -> Result<RecoveryStats> {
    let e = Engine::create(cfg.clone(), Storage::in_memory())?;
    let storage = e.crash(FlushFault::Absent)?;
    let (_, stats) = Engine::open(cfg.clone(), storage)?;
    Ok(stats)
}
