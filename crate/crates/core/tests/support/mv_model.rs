//! Naive multi-version reference model of the DRAM buffer and flash queue.
//!
//! The model keeps the DRAM buffer as a plain vector (LRU first) and the
//! flash cache as a deque of every version ever enqueued, and applies the
//! replacement rules with linear scans. After every operation the DRAM
//! contents and flags, the whole flash queue and the disk versions must
//! match the engine exactly.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use face_core::device::{ClockModel, DeviceProfile};
use face_core::{Engine, EngineConfig, Lsn, PageId, Replacement, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MFrame {
    id: u64,
    lsn: u64,
    dirty: bool,
    fdirty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MVersion {
    id: u64,
    lsn: u64,
    dirty: bool,
    valid: bool,
    referenced: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Read(u64),
    Write(u64),
    Checkpoint,
}

pub struct Model {
    dram_cap: usize,
    flash_cap: usize,
    depth: usize,
    policy: Replacement,
    dram: Vec<MFrame>,
    queue: VecDeque<MVersion>,
    disk: HashMap<u64, u64>,
    last_lsn: u64,
}

impl Model {
    fn valid_version(&mut self, id: u64) -> Option<&mut MVersion> {
        self.queue.iter_mut().find(|v| v.id == id && v.valid)
    }

    fn fetch(&mut self, id: u64) {
        if let Some(i) = self.dram.iter().position(|f| f.id == id) {
            let f = self.dram.remove(i);
            self.dram.push(f);
            return;
        }
        let frame = match self.valid_version(id) {
            Some(v) => {
                v.referenced = true;
                MFrame { id, lsn: v.lsn, dirty: v.dirty, fdirty: false }
            }
            None => MFrame {
                id,
                lsn: self.disk.get(&id).copied().unwrap_or(0),
                dirty: false,
                fdirty: false,
            },
        };
        let victim = if self.dram.len() == self.dram_cap {
            Some(self.dram.remove(0))
        } else {
            None
        };
        self.dram.push(frame);
        if let Some(v) = victim {
            self.stage_out(v);
        }
    }

    fn stage_out(&mut self, f: MFrame) {
        if f.fdirty || self.valid_version(f.id).is_none() {
            while self.queue.len() == self.flash_cap {
                self.replace();
            }
            for v in self.queue.iter_mut().filter(|v| v.id == f.id) {
                v.valid = false;
            }
            self.queue.push_back(MVersion {
                id: f.id,
                lsn: f.lsn,
                dirty: f.dirty,
                valid: true,
                referenced: false,
            });
        }
    }

    fn flush(&mut self, v: MVersion) {
        if v.dirty && v.valid {
            self.disk.insert(v.id, v.lsn);
            if let Some(f) = self.dram.iter_mut().find(|f| f.id == v.id) {
                if f.lsn == v.lsn && !f.fdirty {
                    f.dirty = false;
                }
            }
        }
    }

    fn replace(&mut self) {
        let n = match self.policy {
            Replacement::Basic => 1,
            _ => self.depth.min(self.queue.len()),
        };
        let batch: Vec<MVersion> = self.queue.drain(..n).collect();
        if self.policy != Replacement::Gsc {
            for v in batch {
                self.flush(v);
            }
            return;
        }
        let all = batch.iter().all(|v| v.referenced && v.valid);
        let mut keep = Vec::new();
        for (i, v) in batch.into_iter().enumerate() {
            if v.referenced && v.valid && !(all && i == 0) {
                keep.push(MVersion { referenced: false, ..v });
            } else {
                self.flush(v);
            }
        }
        let freed = n - keep.len();
        self.queue.extend(keep);
        let pull = freed.saturating_sub(1).min(self.dram.len().saturating_sub(1));
        let pulled: Vec<MFrame> = self.dram.drain(..pull).collect();
        for f in pulled {
            self.stage_out(f);
        }
    }

    fn apply(&mut self, op: Op) {
        match op {
            Op::Read(id) => self.fetch(id),
            Op::Write(id) => {
                self.fetch(id);
                let f = self.dram.last_mut().unwrap();
                self.last_lsn = self.last_lsn.max(f.lsn) + 1;
                f.lsn = self.last_lsn;
                f.dirty = true;
                f.fdirty = true;
            }
            Op::Checkpoint => {
                let ids: Vec<u64> = self.dram.iter().map(|f| f.id).collect();
                for id in ids {
                    let Some(f) = self.dram.iter().find(|f| f.id == id).copied() else {
                        continue;
                    };
                    if !f.dirty || (!f.fdirty && self.valid_version(id).is_some()) {
                        continue;
                    }
                    self.stage_out(f);
                    if let Some(f) = self.dram.iter_mut().find(|f| f.id == id) {
                        f.fdirty = false;
                    }
                }
            }
        }
    }
}

pub fn compare(e: &Engine, m: &Model, db_pages: u64) -> Result<(), String> {
    let dram: Vec<MFrame> = e
        .dram()
        .iter_lru_first()
        .map(|f| MFrame { id: f.id().0, lsn: f.page.lsn.0, dirty: f.dirty, fdirty: f.fdirty })
        .collect();
    if dram != m.dram {
        return Err(format!("DRAM differs\n engine {dram:?}\n model  {:?}", m.dram));
    }
    let queue: Vec<MVersion> = e
        .flash_queue()
        .unwrap()
        .frames_front_to_rear()
        .iter()
        .map(|v| MVersion {
            id: v.page_id.0,
            lsn: v.lsn.0,
            dirty: v.dirty,
            valid: v.valid,
            referenced: v.referenced,
        })
        .collect();
    let model_queue: Vec<MVersion> = m.queue.iter().copied().collect();
    if queue != model_queue {
        return Err(format!("flash queue differs\n engine {queue:?}\n model  {model_queue:?}"));
    }
    for id in 0..db_pages {
        let want = m.disk.get(&id).copied().unwrap_or(0);
        let got = e.disk_lsn(PageId(id)).unwrap();
        if got != Lsn(want) {
            return Err(format!("disk copy of page {id} is {got}, model says {want}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub policy: Replacement,
    pub dram: usize,
    pub flash: usize,
    pub depth: usize,
    pub db: u64,
    pub ops: Vec<Op>,
}

/// Random scenario with caches of at most 32 frames.
pub fn random_scenario<R: rand::Rng>(rng: &mut R, len: usize) -> Scenario {
    let policy = [Replacement::Basic, Replacement::Gr, Replacement::Gsc][rng.random_range(0..3)];
    let flash = rng.random_range(2..=32usize);
    let db = rng.random_range(4..=48u64);
    let ops = (0..len)
        .map(|_| match rng.random_range(0..17) {
            0..=9 => Op::Read(rng.random_range(0..db)),
            10..=15 => Op::Write(rng.random_range(0..db)),
            _ => Op::Checkpoint,
        })
        .collect();
    Scenario {
        policy,
        dram: rng.random_range(1..=8),
        flash,
        depth: rng.random_range(1..=flash),
        db,
        ops,
    }
}

/// Runs the scenario on an engine and on the model, comparing after
/// every operation.
pub fn check(s: &Scenario) -> Result<(), String> {
    let cfg = EngineConfig {
        page_size: 512,
        db_pages: s.db,
        dram_frames: s.dram,
        flash_frames: s.flash as u32,
        replacement: s.policy,
        scan_depth: s.depth as u32,
        seg_cap: Some(1),
        flash_profile: DeviceProfile::mlc(),
        disk_profile: DeviceProfile::disk1(),
        clock: ClockModel::Serialized,
        checked: true,
        ..EngineConfig::default()
    };
    let mut e = Engine::create(cfg, Storage::in_memory()).map_err(|e| e.to_string())?;
    let mut m = Model {
        dram_cap: s.dram,
        flash_cap: s.flash,
        depth: s.depth,
        policy: s.policy,
        dram: Vec::new(),
        queue: VecDeque::new(),
        disk: HashMap::new(),
        last_lsn: 0,
    };
    for (i, &op) in s.ops.iter().enumerate() {
        let r = match op {
            Op::Read(id) => e.read(PageId(id)).map(|_| ()),
            Op::Write(id) => e.write(PageId(id)).map(|_| ()),
            Op::Checkpoint => e.checkpoint(),
        };
        r.map_err(|err| format!("op {i} {op:?}: {err}"))?;
        m.apply(op);
        compare(&e, &m, s.db).map_err(|err| format!("after op {i} {op:?}: {err}"))?;
    }
    let a = e.flash_queue().unwrap().audit();
    if a.violations > 0 {
        return Err(format!("{} non-sequential flash writes", a.violations));
    }
    Ok(())
}
