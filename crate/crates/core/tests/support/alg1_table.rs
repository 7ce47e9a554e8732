//! Table of the page state transitions of the multi-version FIFO cache.
//!
//! Every case runs on a one-frame DRAM buffer, so each access to a new page
//! evicts the previous one, and compares the exact resulting state against a
//! hand-derived expectation.
#![allow(dead_code)]

use face_core::device::{ClockModel, DeviceProfile};
use face_core::{Engine, EngineConfig, Lsn, PageId, Replacement, Storage};

#[derive(Debug, Clone, Copy)]
pub enum Step {
    R(u64),
    W(u64),
}

/// (page, lsn, dirty, fdirty)
pub type DramState = (u64, u64, bool, bool);
/// (page, lsn, dirty, valid)
pub type FlashState = (u64, u64, bool, bool);

pub struct Case {
    pub name: &'static str,
    pub flash: u32,
    pub steps: &'static [Step],
    pub dram: DramState,
    pub queue: &'static [FlashState],
    /// (page, lsn) of pages whose disk copy must have this lsn.
    pub disk: &'static [(u64, u64)],
    pub disk_writes: u64,
}

use Step::{R, W};

pub const CASES: &[Case] = &[
    Case {
        name: "update sets dirty and fdirty",
        flash: 8,
        steps: &[R(0), W(0)],
        dram: (0, 1, true, true),
        queue: &[],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "fetch from disk clears both flags",
        flash: 8,
        steps: &[W(0), R(1)],
        dram: (1, 0, false, false),
        queue: &[(0, 1, true, true)],
        disk: &[(0, 0), (1, 0)],
        disk_writes: 0,
    },
    Case {
        name: "fetch from flash clears fdirty and keeps dirty",
        flash: 8,
        steps: &[W(0), R(1), R(0)],
        dram: (0, 1, true, false),
        queue: &[(0, 1, true, true), (1, 0, false, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "fetch from flash of a clean version",
        flash: 8,
        steps: &[R(0), R(1), R(0)],
        dram: (0, 0, false, false),
        queue: &[(0, 0, false, true), (1, 0, false, true)],
        disk: &[],
        disk_writes: 0,
    },
    Case {
        name: "fdirty eviction invalidates the previous version and enqueues",
        flash: 8,
        steps: &[W(0), R(1), R(0), W(0), R(1)],
        dram: (1, 0, false, false),
        queue: &[(0, 1, true, false), (1, 0, false, true), (0, 2, true, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "eviction of a page absent from flash enqueues even when clean",
        flash: 8,
        steps: &[R(0), R(1)],
        dram: (1, 0, false, false),
        queue: &[(0, 0, false, true)],
        disk: &[],
        disk_writes: 0,
    },
    Case {
        name: "guard: eviction without fdirty and with a valid flash copy is skipped",
        flash: 8,
        steps: &[W(0), R(1), R(0), R(1)],
        dram: (1, 0, false, false),
        queue: &[(0, 1, true, true), (1, 0, false, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "guard: fdirty page is enqueued although a valid copy is cached",
        flash: 8,
        steps: &[R(0), R(1), R(0), W(0), R(1)],
        dram: (1, 0, false, false),
        queue: &[(0, 0, false, false), (1, 0, false, true), (0, 1, true, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "flash dequeue of a dirty valid version writes it to disk",
        flash: 2,
        steps: &[W(0), R(1), R(2), R(3)],
        dram: (3, 0, false, false),
        queue: &[(1, 0, false, true), (2, 0, false, true)],
        disk: &[(0, 1)],
        disk_writes: 1,
    },
    Case {
        name: "flash dequeue of a dirty invalid version discards it",
        flash: 3,
        steps: &[W(0), R(1), R(0), W(0), R(1), R(2), R(3)],
        dram: (3, 0, false, false),
        queue: &[(1, 0, false, true), (0, 2, true, true), (2, 0, false, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
    Case {
        name: "flash dequeue of a clean version discards it",
        flash: 2,
        steps: &[R(0), R(1), R(2), R(3)],
        dram: (3, 0, false, false),
        queue: &[(1, 0, false, true), (2, 0, false, true)],
        disk: &[(0, 0)],
        disk_writes: 0,
    },
];

fn engine(flash: u32) -> Engine {
    let cfg = EngineConfig {
        page_size: 512,
        db_pages: 8,
        dram_frames: 1,
        flash_frames: flash,
        replacement: Replacement::Basic,
        scan_depth: 1,
        seg_cap: Some(1),
        flash_profile: DeviceProfile::mlc(),
        disk_profile: DeviceProfile::disk1(),
        clock: ClockModel::Serialized,
        checked: true,
        ..EngineConfig::default()
    };
    Engine::create(cfg, Storage::in_memory()).expect("create")
}

pub fn run_case(c: &Case) -> Result<(), String> {
    let mut e = engine(c.flash);
    let before = e.counters();
    for &s in c.steps {
        match s {
            R(p) => e.read(PageId(p)),
            W(p) => e.write(PageId(p)),
        }
        .map_err(|err| format!("{s:?}: {err}"))?;
    }
    let dram: Vec<DramState> = e
        .dram()
        .iter_lru_first()
        .map(|f| (f.id().0, f.page.lsn.0, f.dirty, f.fdirty))
        .collect();
    if dram != [c.dram] {
        return Err(format!("DRAM {dram:?}, expected [{:?}]", c.dram));
    }
    let queue: Vec<FlashState> = e
        .flash_queue()
        .expect("flash")
        .frames_front_to_rear()
        .iter()
        .map(|v| (v.page_id.0, v.lsn.0, v.dirty, v.valid))
        .collect();
    if queue != c.queue {
        return Err(format!("flash queue {queue:?}, expected {:?}", c.queue));
    }
    for &(p, lsn) in c.disk {
        let got = e.disk_lsn(PageId(p)).map_err(|err| err.to_string())?;
        if got != Lsn(lsn) {
            return Err(format!("disk copy of page {p} is {got}, expected {lsn}"));
        }
    }
    let writes = e.counters().since(&before).disk_writes;
    if writes != c.disk_writes {
        return Err(format!("{writes} disk writes, expected {}", c.disk_writes));
    }
    e.full_check().map_err(|err| err.to_string())
}

/// Runs every case; returns the failures.
pub fn run_all() -> Vec<(&'static str, String)> {
    CASES
        .iter()
        .filter_map(|c| run_case(c).err().map(|e| (c.name, e)))
        .collect()
}
