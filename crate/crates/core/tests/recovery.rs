//! Crash, restart and shutdown of a persistent flash cache.

use std::collections::HashMap;

use face_core::device::{ClockModel, DeviceProfile};
use face_core::meta::FlushFault;
use face_core::{Engine, EngineConfig, EngineError, Lsn, PageId, Replacement, Storage, SyncPolicy};
use proptest::prelude::*;

const DB: u64 = 96;

fn config(replacement: Replacement, sync: SyncPolicy, seg_cap: u32) -> EngineConfig {
    EngineConfig {
        page_size: 512,
        db_pages: DB,
        dram_frames: 6,
        flash_frames: 40,
        replacement,
        sync,
        scan_depth: 8,
        seg_cap: Some(seg_cap),
        flash_profile: DeviceProfile::mlc(),
        disk_profile: DeviceProfile::disk1(),
        clock: ClockModel::Serialized,
        checked: true,
        track_durability: true,
        ..EngineConfig::default()
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Read(u64),
    Write(u64),
    Checkpoint,
}

fn ops(len: usize) -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        6 => (0..DB).prop_map(Op::Read),
        5 => (0..DB).prop_map(Op::Write),
        1 => Just(Op::Checkpoint),
    ];
    proptest::collection::vec(op, 1..len)
}

/// Runs `ops`, folding every durable write into `durable`.
fn drive(e: &mut Engine, ops: &[Op], durable: &mut HashMap<u64, Lsn>) {
    for &op in ops {
        match op {
            Op::Read(p) => {
                e.read(PageId(p)).unwrap();
            }
            Op::Write(p) => {
                e.write(PageId(p)).unwrap();
            }
            Op::Checkpoint => e.checkpoint().unwrap(),
        }
        for (id, lsn) in e.take_durable() {
            let slot = durable.entry(id.0).or_insert(Lsn::ZERO);
            *slot = (*slot).max(lsn);
        }
    }
}

fn fault_of(kind: u8, torn: u32, e: &Engine) -> FlushFault {
    let pending = e.meta_log().and_then(|l| l.in_flight_len()).unwrap_or(0) as u32;
    match kind {
        0 => FlushFault::Absent,
        1 => FlushFault::Torn {
            entries: torn % (pending + 1),
        },
        _ => FlushFault::Persisted,
    }
}

fn assert_durable(e: &Engine, durable: &HashMap<u64, Lsn>) {
    for p in 0..DB {
        let want = durable.get(&p).copied().unwrap_or(Lsn::ZERO);
        assert_eq!(e.peek_persistent(PageId(p)).unwrap(), want, "page {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn restart_restores_exactly_the_durable_versions(
        policy in prop_oneof![Just(Replacement::Basic), Just(Replacement::Gr), Just(Replacement::Gsc)],
        sync in prop_oneof![Just(SyncPolicy::WriteBack), Just(SyncPolicy::WriteThrough)],
        seg_cap in 1u32..=6,
        before in ops(400),
        after in ops(100),
        kind in 0u8..3,
        torn in any::<u32>(),
    ) {
        let cfg = config(policy, sync, seg_cap);
        let mut e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
        let mut durable = HashMap::new();
        drive(&mut e, &before, &mut durable);
        let fault = fault_of(kind, torn, &e);
        let storage = e.crash(fault).unwrap();

        let (mut e, stats) = Engine::open(cfg, storage).unwrap();
        prop_assert!(stats.pages_scanned <= 2 * seg_cap as u64, "{stats:?}");
        prop_assert!(!stats.clean_shutdown);
        assert_durable(&e, &durable);
        if sync == SyncPolicy::WriteThrough {
            prop_assert_eq!(e.recover_dirty_pages().unwrap(), 0);
        }

        // reads after restart see the durable version, later writes win
        let mut latest = durable.clone();
        for &op in &after {
            match op {
                Op::Read(p) => {
                    let a = e.read(PageId(p)).unwrap();
                    prop_assert_eq!(a.lsn, latest.get(&p).copied().unwrap_or(Lsn::ZERO));
                }
                Op::Write(p) => {
                    let a = e.write(PageId(p)).unwrap();
                    prop_assert!(a.lsn > latest.get(&p).copied().unwrap_or(Lsn::ZERO));
                    latest.insert(p, a.lsn);
                }
                Op::Checkpoint => e.checkpoint().unwrap(),
            }
        }
        e.full_check().unwrap();
    }
}

#[test]
fn crash_immediately_after_create() {
    let cfg = config(Replacement::Gsc, SyncPolicy::WriteBack, 4);
    let e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
    let (e, stats) = Engine::open(cfg, e.crash(FlushFault::Persisted).unwrap()).unwrap();
    assert_eq!(stats.frames_restored, 0);
    assert!(stats.pages_scanned <= 8);
    assert_durable(&e, &HashMap::new());
}

#[test]
fn clean_shutdown_keeps_every_write() {
    let cfg = config(Replacement::Gsc, SyncPolicy::WriteBack, 3);
    let mut e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
    let mut latest = HashMap::new();
    for i in 0..500u64 {
        let p = (i * 7919) % DB;
        if i % 3 == 0 {
            latest.insert(p, e.write(PageId(p)).unwrap().lsn);
        } else {
            e.read(PageId(p)).unwrap();
        }
    }
    let storage = e.shutdown().unwrap();
    let (e, stats) = Engine::open(cfg, storage).unwrap();
    assert!(stats.clean_shutdown);
    assert_eq!(stats.pages_scanned, 0);
    assert!(stats.frames_restored > 0);
    assert_durable(&e, &latest);
}

#[test]
fn write_through_restart_has_no_dirty_flash_pages() {
    let cfg = config(Replacement::Basic, SyncPolicy::WriteThrough, 2);
    let mut e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
    let mut durable = HashMap::new();
    let mix: Vec<Op> = (0..600u64)
        .map(|i| if i % 2 == 0 { Op::Write(i % 50) } else { Op::Read((i * 13) % DB) })
        .collect();
    drive(&mut e, &mix, &mut durable);
    let (e, _) = Engine::open(cfg, e.crash(FlushFault::Absent).unwrap()).unwrap();
    assert_eq!(e.recover_dirty_pages().unwrap(), 0);
    assert_durable(&e, &durable);
}

fn corrupted(cfg: &EngineConfig) -> (Storage, HashMap<u64, Lsn>) {
    let mut e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
    let mut durable = HashMap::new();
    let mix: Vec<Op> = (0..800u64)
        .map(|i| if i % 3 == 0 { Op::Write((i * 31) % DB) } else { Op::Read((i * 17) % DB) })
        .collect();
    drive(&mut e, &mix, &mut durable);
    let mut s = e.crash(FlushFault::Persisted).unwrap();
    let junk = vec![0xA5u8; 2 * cfg.page_size];
    s.meta.write_at(0, &junk).unwrap();
    (s, durable)
}

#[test]
fn corrupt_superblock_is_an_error_without_fallback() {
    let cfg = config(Replacement::Gsc, SyncPolicy::WriteBack, 4);
    let (s, _) = corrupted(&cfg);
    assert!(matches!(Engine::open(cfg, s), Err(EngineError::Recovery(_))));
}

#[test]
fn full_scan_fallback_salvages_flash_to_disk() {
    let cfg = EngineConfig {
        full_scan_fallback: true,
        ..config(Replacement::Gsc, SyncPolicy::WriteBack, 4)
    };
    let (s, durable) = corrupted(&cfg);
    let (e, stats) = Engine::open(cfg.clone(), s).unwrap();
    assert_eq!(stats.pages_scanned, cfg.flash_frames as u64);
    for p in 0..DB {
        let want = durable.get(&p).copied().unwrap_or(Lsn::ZERO);
        assert_eq!(e.disk_lsn(PageId(p)).unwrap(), want, "page {p}");
    }
    assert!(e.flash_queue().unwrap().is_empty());
}

#[test]
fn reopening_with_a_different_segment_size_fails() {
    let cfg = config(Replacement::Basic, SyncPolicy::WriteBack, 4);
    let e = Engine::create(cfg.clone(), Storage::in_memory()).unwrap();
    let s = e.shutdown().unwrap();
    let other = EngineConfig {
        seg_cap: Some(5),
        ..cfg
    };
    assert!(matches!(Engine::open(other, s), Err(EngineError::Recovery(_))));
}
