//! The tiered page store: DRAM buffer, optional flash tier, disk.
//!
//! Flag handling on the flash path:
//!
//! * fetch from disk: `dirty = fdirty = false`
//! * fetch from flash: `fdirty = false`, `dirty` from the flash frame
//! * update: `dirty = fdirty = true`
//! * DRAM eviction: enqueue iff `fdirty` or the page has no valid flash copy
//!   (the previous version is invalidated)
//! * flash dequeue: write to disk iff `dirty` and `valid`

use std::io;

use thiserror::Error;

use crate::baselines::LruKCache;
use crate::config::{AdmitFilter, ConfigError, EngineConfig, Replacement, SyncPolicy};
use crate::device::{CostAccumulator, Device, IoKind, StatsRecord};
use crate::dram::{DramBuffer, DramError, DramFrame, FetchSource};
use crate::flash::{FlashError, FlashQueue};
use crate::media::{Media, Storage};
use crate::meta::{self, FlushFault, MetaGeometry, MetaLog, QueueMark, RecoveryError, RecoveryStats};
use crate::page::{synthetic_body, Lsn, PageHeader, PageId, PageImage, HEADER_SIZE};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{id} is outside the {db_pages}-page database")]
    PageOutOfRange { id: PageId, db_pages: u64 },
    #[error("disk block of {id} holds {found:?}")]
    CorruptDisk { id: PageId, found: PageHeader },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Where a read was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Dram,
    Flash,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub lsn: Lsn,
    pub source: Source,
}

/// Event counts. Copyable so callers can take windows with [`Self::since`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct EngineCounters {
    pub reads: u64,
    pub writes: u64,
    pub dram_hits: u64,
    pub dram_misses: u64,
    pub flash_hits: u64,
    pub disk_reads: u64,
    /// Frames leaving DRAM: evictions, tail pulls.
    pub stage_outs: u64,
    /// Stage-outs and checkpoint check-ins of frames newer than their
    /// lower-tier copy.
    pub dirty_stage_outs: u64,
    pub disk_writes: u64,
    /// Frames written to the flash image (admissions, survivors, in-place).
    pub flash_writes: u64,
    pub replacements: u64,
    pub survivors: u64,
    pub pulled: u64,
    pub forced: u64,
    pub checkpoints: u64,
}

impl EngineCounters {
    pub fn since(&self, e: &EngineCounters) -> EngineCounters {
        EngineCounters {
            reads: self.reads - e.reads,
            writes: self.writes - e.writes,
            dram_hits: self.dram_hits - e.dram_hits,
            dram_misses: self.dram_misses - e.dram_misses,
            flash_hits: self.flash_hits - e.flash_hits,
            disk_reads: self.disk_reads - e.disk_reads,
            stage_outs: self.stage_outs - e.stage_outs,
            dirty_stage_outs: self.dirty_stage_outs - e.dirty_stage_outs,
            disk_writes: self.disk_writes - e.disk_writes,
            flash_writes: self.flash_writes - e.flash_writes,
            replacements: self.replacements - e.replacements,
            survivors: self.survivors - e.survivors,
            pulled: self.pulled - e.pulled,
            forced: self.forced - e.forced,
            checkpoints: self.checkpoints - e.checkpoints,
        }
    }

    /// Flash hits over DRAM misses.
    pub fn flash_hit_rate(&self) -> f64 {
        ratio(self.flash_hits, self.dram_misses)
    }

    pub fn dram_hit_rate(&self) -> f64 {
        ratio(self.dram_hits, self.dram_hits + self.dram_misses)
    }

    /// 1 - disk writes / dirty stage-outs, clamped to [0, 1].
    pub fn write_reduction(&self) -> f64 {
        if self.dirty_stage_outs == 0 {
            return 0.0;
        }
        (1.0 - self.disk_writes as f64 / self.dirty_stage_outs as f64).clamp(0.0, 1.0)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[allow(clippy::large_enum_variant)]
enum Tier {
    None,
    Fifo {
        queue: FlashQueue,
        log: Option<MetaLog>,
    },
    Lru(LruKCache),
}

pub struct Engine {
    cfg: EngineConfig,
    dram: DramBuffer,
    tier: Tier,
    disk: Box<dyn Media>,
    idle_flash: Option<Box<dyn Media>>,
    idle_meta: Option<Box<dyn Media>>,
    cost: CostAccumulator,
    counters: EngineCounters,
    last_lsn: Lsn,
    durable: Vec<(PageId, Lsn)>,
    ops_since_check: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cfg", &self.cfg)
            .field("counters", &self.counters)
            .field("last_lsn", &self.last_lsn)
            .finish_non_exhaustive()
    }
}

fn geometry(cfg: &EngineConfig) -> MetaGeometry {
    MetaGeometry {
        page_size: cfg.page_size,
        capacity: cfg.flash_frames,
        scan_depth: cfg.scan_depth,
        seg_cap: cfg.segment_capacity(),
        flush_lag: cfg.flush_completion_lag(),
        sync: cfg.sync,
    }
}

impl Engine {
    fn assemble(cfg: EngineConfig, disk: Box<dyn Media>, tier: Tier, cost: CostAccumulator) -> Engine {
        let mut e = Engine {
            dram: DramBuffer::new(cfg.dram_frames),
            tier,
            disk,
            idle_flash: None,
            idle_meta: None,
            cost,
            counters: EngineCounters::default(),
            last_lsn: Lsn::ZERO,
            durable: Vec::new(),
            ops_since_check: 0,
            cfg,
        };
        if e.cfg.checked {
            if let Tier::Fifo { queue, .. } = &mut e.tier {
                queue.track_touched();
            }
        }
        e
    }

    fn new_cost(cfg: &EngineConfig) -> CostAccumulator {
        CostAccumulator::new(
            cfg.page_size,
            cfg.flash_profile.clone(),
            cfg.disk_profile.clone(),
            cfg.clock,
        )
    }

    /// Starts on fresh media, formatting the flash directory.
    pub fn create(cfg: EngineConfig, storage: Storage) -> Result<Engine> {
        cfg.validate()?;
        let Storage { disk, flash, meta } = storage;
        let cost = Engine::new_cost(&cfg);
        let (tier, idle_flash, idle_meta) = Engine::fresh_tier(&cfg, flash, meta)?;
        let mut e = Engine::assemble(cfg, disk, tier, cost);
        e.idle_flash = idle_flash;
        e.idle_meta = idle_meta;
        Ok(e)
    }

    #[allow(clippy::type_complexity)]
    fn fresh_tier(
        cfg: &EngineConfig,
        flash: Box<dyn Media>,
        meta: Box<dyn Media>,
    ) -> Result<(Tier, Option<Box<dyn Media>>, Option<Box<dyn Media>>)> {
        if !cfg.has_flash() {
            return Ok((Tier::None, Some(flash), Some(meta)));
        }
        match cfg.replacement {
            Replacement::Basic | Replacement::Gr | Replacement::Gsc => {
                let queue = FlashQueue::new(cfg.flash_frames, cfg.scan_depth, cfg.page_size, flash);
                if cfg.flash_persistent() {
                    let log = MetaLog::create(meta, geometry(cfg))?;
                    Ok((Tier::Fifo { queue, log: Some(log) }, None, None))
                } else {
                    Ok((Tier::Fifo { queue, log: None }, None, Some(meta)))
                }
            }
            Replacement::Lru2 | Replacement::Lru => {
                let k = if cfg.replacement == Replacement::Lru2 { 2 } else { 1 };
                let lc = LruKCache::new(k, cfg.flash_frames, cfg.page_size, cfg.lazy_clean_threshold, flash);
                Ok((Tier::Lru(lc), None, Some(meta)))
            }
        }
    }

    /// Restarts from media left by a crash or a shutdown. A persistent
    /// flash directory is recovered; other flash tiers start empty.
    pub fn open(cfg: EngineConfig, storage: Storage) -> Result<(Engine, RecoveryStats)> {
        cfg.validate()?;
        let Storage { disk, flash, meta } = storage;
        let mut cost = Engine::new_cost(&cfg);
        if !cfg.flash_persistent() {
            let (tier, idle_flash, idle_meta) = Engine::fresh_tier(&cfg, flash, meta)?;
            let mut e = Engine::assemble(cfg, disk, tier, cost);
            e.idle_flash = idle_flash;
            e.idle_meta = idle_meta;
            e.last_lsn = Lsn::ZERO;
            return Ok((e, RecoveryStats::default()));
        }
        let geo = geometry(&cfg);
        if cfg.full_scan_fallback && matches!(meta::read_superblock(&*meta, cfg.page_size), Err(RecoveryError::CorruptSuperBlock)) {
            return Engine::salvage(cfg, disk, flash, meta, cost);
        }
        let r = meta::recover(meta, flash, geo, &mut cost)?;
        let mut e = Engine::assemble(
            cfg,
            disk,
            Tier::Fifo {
                queue: r.queue,
                log: Some(r.log),
            },
            cost,
        );
        e.last_lsn = r.lsn_mark;
        if e.cfg.checked {
            e.full_check()?;
        }
        Ok((e, r.stats))
    }

    /// Full-scan fallback: copies every flash frame that is newer than its
    /// disk block back to disk, then starts with an empty flash cache.
    fn salvage(
        cfg: EngineConfig,
        mut disk: Box<dyn Media>,
        flash: Box<dyn Media>,
        meta: Box<dyn Media>,
        mut cost: CostAccumulator,
    ) -> Result<(Engine, RecoveryStats)> {
        let clock0 = cost.counters();
        let c = cfg.flash_frames;
        let ps = cfg.page_size;
        let image = crate::flash::FlashImage::new(flash, ps, c);
        let mut newest: std::collections::BTreeMap<PageId, (Lsn, u32)> = Default::default();
        for slot in 0..c {
            let h = image.read_header(slot)?;
            if h.is_empty() || h.page_id.0 >= cfg.db_pages {
                continue;
            }
            let best = newest.entry(h.page_id).or_insert((h.page_lsn, slot));
            if h.page_lsn > best.0 {
                *best = (h.page_lsn, slot);
            }
        }
        cost.charge_pages(Device::Flash, IoKind::SeqRead, c as u64);
        let mut lsn_mark = Lsn::ZERO;
        for (id, (lsn, slot)) in newest {
            lsn_mark = lsn_mark.max(lsn);
            let mut hdr = [0u8; HEADER_SIZE];
            disk.read_at(id.0 * ps as u64, &mut hdr)?;
            cost.charge_pages(Device::Disk, IoKind::RandRead, 1);
            if PageHeader::parse(&hdr).page_lsn < lsn {
                let page = image.read_slot(slot)?;
                cost.charge_pages(Device::Flash, IoKind::RandRead, 1);
                disk.write_at(id.0 * ps as u64, &page.serialize())?;
                cost.charge_pages(Device::Disk, IoKind::RandWrite, 1);
            }
        }
        let stats = RecoveryStats {
            pages_scanned: c as u64,
            sim_secs: cost.counters().since(&clock0).clock(cost.clock_model()),
            ..RecoveryStats::default()
        };
        let (tier, _, _) = Engine::fresh_tier(&cfg, image.into_media(), meta)?;
        let mut e = Engine::assemble(cfg, disk, tier, cost);
        e.last_lsn = lsn_mark;
        Ok((e, stats))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn counters(&self) -> EngineCounters {
        self.counters
    }

    pub fn cost(&self) -> &CostAccumulator {
        &self.cost
    }

    pub fn report(&self) -> StatsRecord {
        self.cost.report()
    }

    pub fn dram(&self) -> &DramBuffer {
        &self.dram
    }

    pub fn flash_queue(&self) -> Option<&FlashQueue> {
        match &self.tier {
            Tier::Fifo { queue, .. } => Some(queue),
            _ => None,
        }
    }

    pub fn meta_log(&self) -> Option<&MetaLog> {
        match &self.tier {
            Tier::Fifo { log, .. } => log.as_ref(),
            _ => None,
        }
    }

    pub fn baseline_cache(&self) -> Option<&LruKCache> {
        match &self.tier {
            Tier::Lru(lc) => Some(lc),
            _ => None,
        }
    }

    pub fn last_lsn(&self) -> Lsn {
        self.last_lsn
    }

    /// Writes that reached flash (persistent directory only) or disk since
    /// the last call, if durability tracking is on.
    pub fn take_durable(&mut self) -> Vec<(PageId, Lsn)> {
        std::mem::take(&mut self.durable)
    }

    fn check_range(&self, id: PageId) -> Result<()> {
        if id.0 >= self.cfg.db_pages {
            return Err(EngineError::PageOutOfRange {
                id,
                db_pages: self.cfg.db_pages,
            });
        }
        Ok(())
    }

    pub fn read(&mut self, id: PageId) -> Result<Access> {
        self.check_range(id)?;
        self.counters.reads += 1;
        let source = self.fetch(id)?;
        let lsn = self.dram.peek(id).expect("fetched").page.lsn;
        self.finish_op(Some(id))?;
        Ok(Access { lsn, source })
    }

    /// Writes a new version of `id` and returns its lsn.
    pub fn write(&mut self, id: PageId) -> Result<Access> {
        self.check_range(id)?;
        self.counters.writes += 1;
        let source = self.fetch(id)?;
        let cur = self.dram.peek(id).expect("fetched").page.lsn;
        let lsn = self.last_lsn.max(cur).next();
        self.last_lsn = lsn;
        let body = synthetic_body(id, lsn, self.cfg.page_size - HEADER_SIZE);
        self.dram.update(id, body, lsn)?;
        self.finish_op(Some(id))?;
        Ok(Access { lsn, source })
    }

    fn fetch(&mut self, id: PageId) -> Result<Source> {
        if self.dram.lookup(id).is_some() {
            self.counters.dram_hits += 1;
            return Ok(Source::Dram);
        }
        self.counters.dram_misses += 1;
        let hit = match &mut self.tier {
            Tier::Fifo { queue, .. } => queue
                .lookup(id, &mut self.cost)?
                .map(|(m, p)| (p, m.dirty)),
            Tier::Lru(lc) => lc.lookup(id, &mut self.cost)?.map(|(d, p)| (p, d)),
            Tier::None => None,
        };
        let (page, src, source) = match hit {
            Some((page, dirty)) => {
                self.counters.flash_hits += 1;
                (page, FetchSource::Flash { dirty }, Source::Flash)
            }
            None => (self.read_disk(id)?, FetchSource::Disk, Source::Disk),
        };
        if self.cfg.checked && !page.is_synthetic() {
            return Err(EngineError::Invariant(format!(
                "{id} at {} has content of another version",
                page.lsn
            )));
        }
        if let Some(victim) = self.dram.install(page, src)? {
            self.stage_out(victim)?;
        }
        Ok(source)
    }

    fn read_disk(&mut self, id: PageId) -> Result<PageImage> {
        let ps = self.cfg.page_size;
        let mut buf = vec![0u8; ps];
        self.disk.read_at(id.0 * ps as u64, &mut buf)?;
        self.cost.charge_pages(Device::Disk, IoKind::RandRead, 1);
        self.counters.disk_reads += 1;
        let page = PageImage::deserialize(&buf, ps).expect("page-sized buffer");
        if page.header().is_empty() {
            return Ok(PageImage::zeroed(id, Lsn::ZERO, ps).expect("valid page size"));
        }
        if page.id != id {
            return Err(EngineError::CorruptDisk {
                id,
                found: page.header(),
            });
        }
        Ok(page)
    }

    fn write_disk(&mut self, page: &PageImage) -> Result<()> {
        let ps = self.cfg.page_size as u64;
        self.disk.write_at(page.id.0 * ps, &page.serialize())?;
        self.cost.charge_pages(Device::Disk, IoKind::RandWrite, 1);
        self.counters.disk_writes += 1;
        if self.cfg.track_durability {
            self.durable.push((page.id, page.lsn));
        }
        Ok(())
    }

    /// A lower tier wrote `page` to disk; a DRAM copy of the same version
    /// is no longer newer than disk.
    fn flushed_to_disk(&mut self, page: &PageImage) -> Result<()> {
        self.write_disk(page)?;
        if let Some(f) = self.dram.peek(page.id) {
            if f.page.lsn == page.lsn && f.dirty && !f.fdirty {
                self.dram.set_flags(page.id, false, false)?;
            }
        }
        Ok(())
    }

    fn stage_out(&mut self, f: DramFrame) -> Result<()> {
        self.counters.stage_outs += 1;
        if f.fdirty {
            self.counters.dirty_stage_outs += 1;
        }
        self.admit(&f.page, f.dirty, f.fdirty)
    }

    /// Hands one DRAM page version to the lower tiers.
    fn admit(&mut self, page: &PageImage, dirty: bool, fdirty: bool) -> Result<()> {
        match self.tier {
            Tier::None => {
                if dirty {
                    self.write_disk(page)?;
                }
                Ok(())
            }
            Tier::Fifo { .. } => self.admit_fifo(page, dirty, fdirty),
            Tier::Lru(_) => self.admit_lru(page, dirty, fdirty),
        }
    }

    fn admit_fifo(&mut self, page: &PageImage, dirty: bool, fdirty: bool) -> Result<()> {
        let Tier::Fifo { queue, .. } = &mut self.tier else { unreachable!() };
        let id = page.id;
        match self.cfg.admit {
            AdmitFilter::CleanOnly if dirty => {
                queue.invalidate(id);
                return self.write_disk(page);
            }
            AdmitFilter::DirtyOnly if !dirty => return Ok(()),
            _ => {}
        }
        if !fdirty && queue.has_valid(id) {
            return Ok(());
        }
        let mut stored_dirty = dirty;
        if self.cfg.sync == SyncPolicy::WriteThrough && dirty {
            self.write_disk(page)?;
            stored_dirty = false;
        }
        self.make_room()?;
        let Tier::Fifo { queue, .. } = &mut self.tier else { unreachable!() };
        queue.enqueue(page, stored_dirty)?;
        self.counters.flash_writes += 1;
        if self.cfg.track_durability && self.cfg.flash_persistent() {
            self.durable.push((id, page.lsn));
        }
        Ok(())
    }

    fn make_room(&mut self) -> Result<()> {
        loop {
            let Tier::Fifo { queue, .. } = &mut self.tier else { unreachable!() };
            if !queue.is_full() {
                return Ok(());
            }
            self.counters.replacements += 1;
            let ev = match self.cfg.replacement {
                Replacement::Basic => queue.evict_basic(&mut self.cost)?,
                Replacement::Gr => queue.evict_group_replacement(&mut self.cost)?,
                _ => queue.evict_group_second_chance(&mut self.dram, &mut self.cost)?,
            };
            let survivors = ev.survivors as u64;
            self.counters.survivors += survivors;
            self.counters.flash_writes += survivors;
            self.counters.forced += ev.forced as u64;
            if self.cfg.track_durability {
                // survivors are rewritten at new positions
                let Tier::Fifo { queue, .. } = &self.tier else { unreachable!() };
                let frames = queue.frames_front_to_rear();
                let n = frames.len();
                for m in &frames[n - ev.survivors..] {
                    self.durable.push((m.page_id, m.lsn));
                }
            }
            for p in &ev.flushed {
                self.flushed_to_disk(p)?;
            }
            self.counters.pulled += ev.pulled.len() as u64;
            for f in ev.pulled {
                self.stage_out(f)?;
            }
        }
    }

    fn admit_lru(&mut self, page: &PageImage, dirty: bool, fdirty: bool) -> Result<()> {
        let mut stored_dirty = dirty;
        if self.cfg.sync == SyncPolicy::WriteThrough && dirty {
            self.write_disk(page)?;
            stored_dirty = false;
        }
        let Tier::Lru(lc) = &mut self.tier else { unreachable!() };
        let cached = lc.contains(page.id);
        let to_disk = lc.admit(page, stored_dirty, fdirty, &mut self.cost)?;
        if fdirty || !cached {
            self.counters.flash_writes += 1;
        }
        for p in &to_disk {
            self.flushed_to_disk(p)?;
        }
        Ok(())
    }

    /// Database checkpoint. With a multi-version FIFO tier, dirty DRAM
    /// pages are checked in to flash rather than written to disk; other
    /// tiers write them to disk.
    pub fn checkpoint(&mut self) -> Result<()> {
        self.counters.checkpoints += 1;
        let ids = self.dram.ids_lru_first();
        match self.tier {
            Tier::Fifo { .. } => {
                for id in ids {
                    let Some(f) = self.dram.peek(id) else { continue };
                    if !f.dirty {
                        continue;
                    }
                    let (page, dirty, fdirty) = (f.page.clone(), f.dirty, f.fdirty);
                    let Tier::Fifo { queue, .. } = &self.tier else { unreachable!() };
                    if !fdirty && queue.has_valid(id) {
                        continue;
                    }
                    if fdirty {
                        self.counters.dirty_stage_outs += 1;
                    }
                    self.admit_fifo(&page, dirty, fdirty)?;
                    let on_disk = self.cfg.sync == SyncPolicy::WriteThrough
                        || self.cfg.admit == AdmitFilter::CleanOnly;
                    if self.dram.contains(id) {
                        self.dram.set_flags(id, dirty && !on_disk, false)?;
                    }
                }
            }
            Tier::Lru(_) => {
                let Tier::Lru(lc) = &mut self.tier else { unreachable!() };
                let flushed = lc.flush_dirty(&mut self.cost)?;
                for p in &flushed {
                    self.flushed_to_disk(p)?;
                }
                for id in ids {
                    let f = self.dram.peek(id).expect("resident");
                    if !f.dirty {
                        continue;
                    }
                    let (page, fdirty) = (f.page.clone(), f.fdirty);
                    if fdirty {
                        self.counters.dirty_stage_outs += 1;
                    }
                    self.write_disk(&page)?;
                    let Tier::Lru(lc) = &mut self.tier else { unreachable!() };
                    if lc.refresh_clean(&page, &mut self.cost)? {
                        self.counters.flash_writes += 1;
                    }
                    self.dram.set_flags(id, false, false)?;
                }
            }
            Tier::None => {
                for id in ids {
                    let f = self.dram.peek(id).expect("resident");
                    if !f.dirty {
                        continue;
                    }
                    let page = f.page.clone();
                    self.counters.dirty_stage_outs += 1;
                    self.write_disk(&page)?;
                    self.dram.set_flags(id, false, false)?;
                }
            }
        }
        self.finish_op(None)
    }

    fn finish_op(&mut self, id: Option<PageId>) -> Result<()> {
        if let Tier::Fifo { queue, log } = &mut self.tier {
            queue.charge_rear_writes(&mut self.cost);
            let entries = queue.drain_entries();
            if let Some(log) = log {
                let mark = QueueMark {
                    front: queue.front(),
                    rear: queue.rear(),
                    lsn_mark: self.last_lsn,
                };
                for e in entries {
                    log.append(e, mark, &mut self.cost)?;
                }
            }
        }
        if self.cfg.checked {
            self.incremental_check(id)?;
        }
        Ok(())
    }

    fn incremental_check(&mut self, id: Option<PageId>) -> Result<()> {
        self.ops_since_check += 1;
        if let Some(id) = id {
            let f = self.dram.peek(id).expect("just accessed");
            if f.fdirty && !f.dirty {
                return Err(EngineError::Invariant(format!("{id} fdirty without dirty")));
            }
        }
        match &mut self.tier {
            Tier::Fifo { queue, .. } => {
                let mut touched = queue.take_touched();
                touched.sort_unstable();
                touched.dedup();
                for p in touched {
                    queue.check_page(p).map_err(EngineError::Invariant)?;
                }
                let a = queue.audit();
                if a.violations > 0 {
                    return Err(EngineError::Invariant(format!(
                        "non-sequential flash write: expected slot {:?}",
                        a.first_violation
                    )));
                }
            }
            Tier::Lru(_) | Tier::None => {}
        }
        let period = (self.cfg.flash_frames as u64).max(self.cfg.dram_frames as u64).max(64);
        if self.ops_since_check >= period {
            self.full_check()?;
        }
        Ok(())
    }

    /// Checks every structural invariant of every tier.
    pub fn full_check(&mut self) -> Result<()> {
        self.ops_since_check = 0;
        self.dram.check().map_err(EngineError::Invariant)?;
        match &self.tier {
            Tier::Fifo { queue, .. } => {
                queue.check().map_err(EngineError::Invariant)?;
                if queue.audit().violations > 0 {
                    return Err(EngineError::Invariant("non-sequential flash write".into()));
                }
                for f in self.dram.iter_lru_first() {
                    if let Some(m) = queue.valid_meta(f.id()) {
                        if m.lsn > f.page.lsn {
                            return Err(EngineError::Invariant(format!(
                                "{} flash copy {} newer than DRAM {}",
                                f.id(),
                                m.lsn,
                                f.page.lsn
                            )));
                        }
                        if !f.fdirty && m.lsn != f.page.lsn {
                            return Err(EngineError::Invariant(format!(
                                "{} not fdirty but flash holds {} vs {}",
                                f.id(),
                                m.lsn,
                                f.page.lsn
                            )));
                        }
                    }
                }
            }
            Tier::Lru(lc) => lc.check().map_err(EngineError::Invariant)?,
            Tier::None => {}
        }
        Ok(())
    }

    /// Lsn of the disk block of `id`, read without charging.
    pub fn disk_lsn(&self, id: PageId) -> Result<Lsn> {
        let mut hdr = [0u8; HEADER_SIZE];
        self.disk.read_at(id.0 * self.cfg.page_size as u64, &mut hdr)?;
        Ok(PageHeader::parse(&hdr).page_lsn)
    }

    /// Newest version of `id` held by flash or disk (not DRAM), read from
    /// the media without charging or touching any replacement state.
    pub fn peek_persistent(&self, id: PageId) -> Result<Lsn> {
        let disk = self.disk_lsn(id)?;
        let flash = match &self.tier {
            Tier::Fifo { queue, .. } => match queue.valid_meta(id) {
                Some(m) => {
                    let h = queue.image().read_header(m.frame_index)?;
                    if h.page_id != id || h.page_lsn != m.lsn {
                        return Err(EngineError::Invariant(format!(
                            "slot {} holds {h:?}, directory says {id} {}",
                            m.frame_index, m.lsn
                        )));
                    }
                    m.lsn
                }
                None => Lsn::ZERO,
            },
            Tier::Lru(lc) => lc.entry(id).map_or(Lsn::ZERO, |e| e.lsn),
            Tier::None => Lsn::ZERO,
        };
        Ok(disk.max(flash))
    }

    /// Valid dirty flash frames newer than their disk copy: pages whose only
    /// current copy is in flash. Nothing is flushed.
    pub fn recover_dirty_pages(&self) -> Result<u64> {
        let Tier::Fifo { queue, .. } = &self.tier else {
            return Ok(0);
        };
        let mut n = 0;
        for m in queue.frames_front_to_rear() {
            if m.valid && m.dirty && m.lsn > self.disk_lsn(m.page_id)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Clean shutdown: checkpoint, then persist the flash directory. Dirty
    /// pages of a non-persistent flash tier are written to disk.
    pub fn shutdown(mut self) -> Result<Storage> {
        self.checkpoint()?;
        let mark = self.mark();
        let ps = self.cfg.page_size as u64;
        let Engine {
            tier,
            disk,
            idle_flash,
            idle_meta,
            mut cost,
            ..
        } = self;
        let (flash, meta) = match tier {
            Tier::Fifo { queue, log } => {
                let frames = queue.frames_front_to_rear();
                let mut disk = disk;
                let log_media = match log {
                    Some(log) => log.shutdown(mark, &mut cost)?,
                    None => {
                        // flash copies are clean here: nothing to write back
                        debug_assert!(frames.iter().all(|m| !m.dirty || !m.valid));
                        idle_meta.expect("idle meta")
                    }
                };
                disk.sync()?;
                return Ok(Storage {
                    disk,
                    flash: queue.into_media(),
                    meta: log_media,
                });
            }
            Tier::Lru(mut lc) => {
                let flushed = lc.flush_dirty(&mut cost)?;
                let mut disk = disk;
                for p in &flushed {
                    disk.write_at(p.id.0 * ps, &p.serialize())?;
                    cost.charge_pages(Device::Disk, IoKind::RandWrite, 1);
                }
                disk.sync()?;
                return Ok(Storage {
                    disk,
                    flash: lc.into_media(),
                    meta: idle_meta.expect("idle meta"),
                });
            }
            Tier::None => (idle_flash.expect("idle flash"), idle_meta.expect("idle meta")),
        };
        Ok(Storage { disk, flash, meta })
    }

    fn mark(&self) -> QueueMark {
        match &self.tier {
            Tier::Fifo { queue, .. } => QueueMark {
                front: queue.front(),
                rear: queue.rear(),
                lsn_mark: self.last_lsn,
            },
            _ => QueueMark::default(),
        }
    }

    /// Drops all volatile state. A metadata segment flush still in flight
    /// reaches the media as `fault` dictates.
    pub fn crash(self, fault: FlushFault) -> Result<Storage> {
        let Engine {
            tier,
            disk,
            idle_flash,
            idle_meta,
            ..
        } = self;
        let (flash, meta) = match tier {
            Tier::Fifo { queue, log } => {
                let meta = match log {
                    Some(log) => log.crash(fault)?,
                    None => idle_meta.expect("idle meta"),
                };
                (queue.into_media(), meta)
            }
            Tier::Lru(lc) => (lc.into_media(), idle_meta.expect("idle meta")),
            Tier::None => (idle_flash.expect("idle flash"), idle_meta.expect("idle meta")),
        };
        Ok(Storage { disk, flash, meta })
    }
}
