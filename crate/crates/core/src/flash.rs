//! Multi-version FIFO flash cache.
//!
//! Frames enter only at the rear of a circular queue over the flash image
//! and leave only from the front. A page may have several frames in the
//! queue at once; only the newest is `valid`. Older versions are dead space
//! until the front reaches them.
//!
//! Queue positions are monotone entry numbers: the frame enqueued n-th sits
//! in slot `n % capacity`. `front` and `rear` are positions, so occupancy is
//! `rear - front` with no wrap arithmetic.

use std::collections::HashMap;
use std::io;

use thiserror::Error;

use crate::device::{CostAccumulator, Device, IoKind};
use crate::dram::{DramBuffer, DramFrame};
use crate::media::Media;
use crate::meta::MetadataEntry;
use crate::page::{Lsn, PageHeader, PageId, PageImage};

#[derive(Debug, Error)]
pub enum FlashError {
    #[error("flash queue is empty")]
    EmptyQueue,
    #[error("flash queue is full")]
    QueueFull,
    #[error("slot {slot} holds {found:?}, directory expects {expected} at {lsn}")]
    CorruptFrame {
        slot: u32,
        expected: PageId,
        lsn: Lsn,
        found: PageHeader,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashFrameMeta {
    pub page_id: PageId,
    pub frame_index: u32,
    pub dirty: bool,
    pub lsn: Lsn,
    pub valid: bool,
    pub referenced: bool,
}

/// Records every data-frame write offset and checks that each one lands on
/// the slot after the previous one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppendAudit {
    next: Option<u32>,
    pub writes: u64,
    pub violations: u64,
    pub first_violation: Option<(u32, u32)>,
}

impl AppendAudit {
    fn record(&mut self, slot: u32, capacity: u32) {
        self.writes += 1;
        if let Some(want) = self.next {
            if want != slot {
                self.violations += 1;
                self.first_violation.get_or_insert((want, slot));
            }
        }
        self.next = Some((slot + 1) % capacity);
    }

    /// Expected slot of the next write, if any write has been seen.
    pub fn next_slot(&self) -> Option<u32> {
        self.next
    }
}

/// The flash image with an append-order audit on data writes.
pub struct FlashImage {
    media: Box<dyn Media>,
    page_size: usize,
    capacity: u32,
    audit: AppendAudit,
}

impl std::fmt::Debug for FlashImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlashImage")
            .field("capacity", &self.capacity)
            .field("audit", &self.audit)
            .finish_non_exhaustive()
    }
}

impl FlashImage {
    pub fn new(media: Box<dyn Media>, page_size: usize, capacity: u32) -> FlashImage {
        FlashImage {
            media,
            page_size,
            capacity,
            audit: AppendAudit::default(),
        }
    }

    fn offset(&self, slot: u32) -> u64 {
        slot as u64 * self.page_size as u64
    }

    pub fn write_slot(&mut self, slot: u32, page: &PageImage) -> io::Result<()> {
        self.audit.record(slot, self.capacity);
        let off = self.offset(slot);
        self.media.write_at(off, &page.serialize())
    }

    pub fn read_slot(&self, slot: u32) -> io::Result<PageImage> {
        let mut buf = vec![0u8; self.page_size];
        self.media.read_at(self.offset(slot), &mut buf)?;
        Ok(PageImage::deserialize(&buf, self.page_size).expect("buffer sized to page"))
    }

    pub fn read_header(&self, slot: u32) -> io::Result<PageHeader> {
        let mut buf = [0u8; 16];
        self.media.read_at(self.offset(slot), &mut buf)?;
        Ok(PageHeader::parse(&buf))
    }

    pub fn audit(&self) -> &AppendAudit {
        &self.audit
    }

    pub fn into_media(self) -> Box<dyn Media> {
        self.media
    }
}

#[derive(Debug, Clone, Default)]
struct PageFrames {
    frames: Vec<u32>,
    valid: Option<u32>,
}

/// Outcome of one replacement call.
#[derive(Debug, Default)]
pub struct Eviction {
    /// Queue slots released, net of survivors put back.
    pub freed: usize,
    /// Dirty valid pages that must now be written to disk, front first.
    pub flushed: Vec<PageImage>,
    /// Frames given a second chance and moved to the rear.
    pub survivors: usize,
    /// True when every frame of the batch was referenced and the front one
    /// was evicted anyway.
    pub forced: bool,
    /// Frames pulled from the DRAM tail to fill the rear batch.
    pub pulled: Vec<DramFrame>,
}

#[derive(Debug)]
pub struct FlashQueue {
    capacity: u32,
    scan_depth: u32,
    page_size: usize,
    slots: Vec<Option<FlashFrameMeta>>,
    front: u64,
    rear: u64,
    by_page: HashMap<PageId, PageFrames>,
    image: FlashImage,
    pending_from: u64,
    outbox: Vec<MetadataEntry>,
    touched: Option<Vec<PageId>>,
}

impl FlashQueue {
    pub fn new(capacity: u32, scan_depth: u32, page_size: usize, media: Box<dyn Media>) -> FlashQueue {
        assert!(capacity >= 1 && scan_depth >= 1 && scan_depth <= capacity);
        FlashQueue {
            capacity,
            scan_depth,
            page_size,
            slots: vec![None; capacity as usize],
            front: 0,
            rear: 0,
            by_page: HashMap::new(),
            image: FlashImage::new(media, page_size, capacity),
            pending_from: 0,
            outbox: Vec::new(),
            touched: None,
        }
    }

    /// Rebuilds a queue from a recovered window of entries in position
    /// order, the first at position `front`. Valid flags are recomputed:
    /// the highest lsn per page wins, a later position breaking ties.
    pub fn restore(
        capacity: u32,
        scan_depth: u32,
        page_size: usize,
        media: Box<dyn Media>,
        front: u64,
        entries: &[MetadataEntry],
    ) -> FlashQueue {
        let mut q = FlashQueue::new(capacity, scan_depth, page_size, media);
        q.front = front;
        q.rear = front + entries.len() as u64;
        q.pending_from = q.rear;
        assert!(entries.len() <= capacity as usize);
        for (i, e) in entries.iter().enumerate() {
            let slot = q.slot_of(front + i as u64);
            debug_assert_eq!(slot, e.frame_index);
            q.slots[slot as usize] = Some(FlashFrameMeta {
                page_id: e.page_id,
                frame_index: slot,
                dirty: e.dirty,
                lsn: e.lsn,
                valid: false,
                referenced: false,
            });
            let pf = q.by_page.entry(e.page_id).or_default();
            pf.frames.push(slot);
            let newer = match pf.valid {
                Some(v) => e.lsn >= q.slots[v as usize].expect("indexed").lsn,
                None => true,
            };
            if newer {
                pf.valid = Some(slot);
            }
        }
        for pf in q.by_page.values() {
            if let Some(v) = pf.valid {
                q.slots[v as usize].as_mut().expect("indexed").valid = true;
            }
        }
        q.image.audit.next = Some(q.slot_of(q.rear));
        q
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn scan_depth(&self) -> u32 {
        self.scan_depth
    }

    pub fn occupancy(&self) -> usize {
        (self.rear - self.front) as usize
    }

    pub fn is_full(&self) -> bool {
        self.occupancy() >= self.capacity as usize
    }

    pub fn is_empty(&self) -> bool {
        self.rear == self.front
    }

    /// Position of the front frame.
    pub fn front(&self) -> u64 {
        self.front
    }

    /// Position the next enqueued frame will take.
    pub fn rear(&self) -> u64 {
        self.rear
    }

    pub fn slot_of(&self, pos: u64) -> u32 {
        (pos % self.capacity as u64) as u32
    }

    pub fn image(&self) -> &FlashImage {
        &self.image
    }

    pub fn audit(&self) -> &AppendAudit {
        self.image.audit()
    }

    pub fn into_media(self) -> Box<dyn Media> {
        self.image.into_media()
    }

    /// Starts collecting the ids of pages whose frames change, for
    /// incremental invariant checks.
    pub fn track_touched(&mut self) {
        self.touched.get_or_insert_with(Vec::new);
    }

    pub fn take_touched(&mut self) -> Vec<PageId> {
        match self.touched.as_mut() {
            Some(t) => std::mem::take(t),
            None => Vec::new(),
        }
    }

    fn touch(&mut self, id: PageId) {
        if let Some(t) = self.touched.as_mut() {
            t.push(id);
        }
    }

    /// Metadata of the valid frame of `id`, without I/O.
    pub fn valid_meta(&self, id: PageId) -> Option<&FlashFrameMeta> {
        let slot = self.by_page.get(&id)?.valid?;
        self.slots[slot as usize].as_ref()
    }

    pub fn has_valid(&self, id: PageId) -> bool {
        self.valid_meta(id).is_some()
    }

    /// Number of frames (valid or not) held for `id`.
    pub fn versions(&self, id: PageId) -> usize {
        self.by_page.get(&id).map_or(0, |p| p.frames.len())
    }

    /// Reads the valid frame of `id` (one random flash read) and marks it
    /// referenced.
    pub fn lookup(
        &mut self,
        id: PageId,
        cost: &mut CostAccumulator,
    ) -> Result<Option<(FlashFrameMeta, PageImage)>, FlashError> {
        let Some(slot) = self.by_page.get(&id).and_then(|p| p.valid) else {
            return Ok(None);
        };
        cost.charge_pages(Device::Flash, IoKind::RandRead, 1);
        let page = self.read_checked(slot)?;
        let meta = self.slots[slot as usize].as_mut().expect("valid slot");
        meta.referenced = true;
        Ok(Some((*meta, page)))
    }

    fn read_checked(&self, slot: u32) -> Result<PageImage, FlashError> {
        let meta = self.slots[slot as usize].expect("occupied slot");
        let page = self.image.read_slot(slot)?;
        if page.id != meta.page_id || page.lsn != meta.lsn {
            return Err(FlashError::CorruptFrame {
                slot,
                expected: meta.page_id,
                lsn: meta.lsn,
                found: page.header(),
            });
        }
        Ok(page)
    }

    /// Marks the valid frame of `id` invalid. Metadata only.
    pub fn invalidate(&mut self, id: PageId) -> bool {
        let Some(pf) = self.by_page.get_mut(&id) else {
            return false;
        };
        let Some(slot) = pf.valid.take() else {
            return false;
        };
        self.slots[slot as usize].as_mut().expect("valid slot").valid = false;
        self.touch(id);
        true
    }

    /// Writes `page` at the rear as the new valid version, invalidating any
    /// older one. The write is charged later by [`Self::charge_rear_writes`].
    pub fn enqueue(&mut self, page: &PageImage, dirty: bool) -> Result<u32, FlashError> {
        if self.is_full() {
            return Err(FlashError::QueueFull);
        }
        self.invalidate(page.id);
        let slot = self.slot_of(self.rear);
        self.image.write_slot(slot, page)?;
        self.slots[slot as usize] = Some(FlashFrameMeta {
            page_id: page.id,
            frame_index: slot,
            dirty,
            lsn: page.lsn,
            valid: true,
            referenced: false,
        });
        let pf = self.by_page.entry(page.id).or_default();
        pf.frames.push(slot);
        pf.valid = Some(slot);
        self.rear += 1;
        self.outbox.push(MetadataEntry {
            page_id: page.id,
            frame_index: slot,
            dirty,
            lsn: page.lsn,
        });
        self.touch(page.id);
        Ok(slot)
    }

    /// Directory entries appended since the last drain, in position order.
    pub fn drain_entries(&mut self) -> Vec<MetadataEntry> {
        std::mem::take(&mut self.outbox)
    }

    /// Charges every rear write since the previous call as sequential
    /// extents (two if the run wrapped).
    pub fn charge_rear_writes(&mut self, cost: &mut CostAccumulator) {
        let (from, to) = (self.pending_from, self.rear);
        self.pending_from = self.rear;
        self.charge_extents(cost, IoKind::SeqWrite, from, to - from);
    }

    fn charge_extents(&self, cost: &mut CostAccumulator, kind: IoKind, from: u64, count: u64) {
        if count == 0 {
            return;
        }
        let c = self.capacity as u64;
        let first = count.min(c - from % c);
        cost.charge_pages(Device::Flash, kind, first);
        cost.charge_pages(Device::Flash, kind, count - first);
    }

    fn dequeue_front(&mut self) -> Result<FlashFrameMeta, FlashError> {
        if self.is_empty() {
            return Err(FlashError::EmptyQueue);
        }
        let slot = self.slot_of(self.front);
        let meta = self.slots[slot as usize].take().expect("occupied front");
        self.front += 1;
        let pf = self.by_page.get_mut(&meta.page_id).expect("indexed page");
        let i = pf.frames.iter().position(|&s| s == slot).expect("indexed frame");
        pf.frames.swap_remove(i);
        if pf.valid == Some(slot) {
            pf.valid = None;
        }
        if pf.frames.is_empty() {
            self.by_page.remove(&meta.page_id);
        }
        self.touch(meta.page_id);
        Ok(meta)
    }

    /// Dequeues the front frame; a dirty valid frame is read (one
    /// sequential flash read) and returned for a disk write.
    pub fn evict_basic(&mut self, cost: &mut CostAccumulator) -> Result<Eviction, FlashError> {
        let slot = self.slot_of(self.front);
        if self.is_empty() {
            return Err(FlashError::EmptyQueue);
        }
        let mut out = Eviction {
            freed: 1,
            ..Eviction::default()
        };
        let meta = self.slots[slot as usize].expect("occupied front");
        if meta.dirty && meta.valid {
            cost.charge_pages(Device::Flash, IoKind::SeqRead, 1);
            out.flushed.push(self.read_checked(slot)?);
        }
        self.dequeue_front()?;
        Ok(out)
    }

    /// Dequeues min(scan_depth, occupancy) front frames as one batch read,
    /// applying the basic rule to each.
    pub fn evict_group_replacement(
        &mut self,
        cost: &mut CostAccumulator,
    ) -> Result<Eviction, FlashError> {
        if self.is_empty() {
            return Err(FlashError::EmptyQueue);
        }
        let batch = (self.scan_depth as usize).min(self.occupancy());
        self.charge_extents(cost, IoKind::SeqRead, self.front, batch as u64);
        let mut out = Eviction {
            freed: batch,
            ..Eviction::default()
        };
        for _ in 0..batch {
            let slot = self.slot_of(self.front);
            let meta = self.slots[slot as usize].expect("occupied front");
            if meta.dirty && meta.valid {
                out.flushed.push(self.read_checked(slot)?);
            }
            self.dequeue_front()?;
        }
        Ok(out)
    }

    /// Group second chance: like group replacement, but referenced valid
    /// frames are moved to the rear with their flag cleared. If the whole
    /// batch survives, the front frame is evicted anyway. The space left in
    /// the rear batch, less one slot kept for the page being admitted, is
    /// filled with frames pulled from the DRAM LRU tail; the caller stages
    /// those out.
    pub fn evict_group_second_chance(
        &mut self,
        dram: &mut DramBuffer,
        cost: &mut CostAccumulator,
    ) -> Result<Eviction, FlashError> {
        if self.is_empty() {
            return Err(FlashError::EmptyQueue);
        }
        let batch = (self.scan_depth as usize).min(self.occupancy());
        self.charge_extents(cost, IoKind::SeqRead, self.front, batch as u64);

        let mut out = Eviction::default();
        let mut keep: Vec<(PageImage, bool)> = Vec::new();
        let all_referenced = (0..batch).all(|i| {
            let m = self.slots[self.slot_of(self.front + i as u64) as usize].expect("occupied");
            m.referenced && m.valid
        });
        for i in 0..batch {
            let slot = self.slot_of(self.front);
            let meta = self.slots[slot as usize].expect("occupied front");
            let survives = meta.referenced && meta.valid && !(all_referenced && i == 0);
            if survives {
                keep.push((self.read_checked(slot)?, meta.dirty));
            } else if meta.dirty && meta.valid {
                out.flushed.push(self.read_checked(slot)?);
            }
            self.dequeue_front()?;
        }
        out.forced = all_referenced;
        out.survivors = keep.len();
        for (page, dirty) in &keep {
            self.enqueue(page, *dirty)?;
        }
        out.freed = batch - out.survivors;
        // a DRAM copy of a version just flushed is no longer dirty; clear it
        // before the tail is pulled so it is not staged out as dirty again
        for p in &out.flushed {
            if let Some(f) = dram.peek(p.id) {
                if f.page.lsn == p.lsn && f.dirty && !f.fdirty {
                    dram.set_flags(p.id, false, false).expect("resident");
                }
            }
        }
        // the MRU frame is the page being accessed and always stays
        let pull = out.freed.saturating_sub(1).min(dram.len().saturating_sub(1));
        out.pulled = dram.pull_tail(pull);
        Ok(out)
    }

    /// Snapshot of the queue, front to rear.
    pub fn frames_front_to_rear(&self) -> Vec<FlashFrameMeta> {
        (self.front..self.rear)
            .map(|n| self.slots[self.slot_of(n) as usize].expect("occupied"))
            .collect()
    }

    /// Checks the single-valid-copy invariant for one page.
    pub fn check_page(&self, id: PageId) -> Result<(), String> {
        let Some(pf) = self.by_page.get(&id) else {
            return Ok(());
        };
        if pf.frames.is_empty() {
            return Err(format!("{id} indexed with no frames"));
        }
        let mut valid = 0;
        let mut max_lsn = Lsn::ZERO;
        for &s in &pf.frames {
            let m = self.slots[s as usize]
                .ok_or_else(|| format!("{id} indexed at empty slot {s}"))?;
            if m.page_id != id {
                return Err(format!("slot {s} holds {} but is indexed for {id}", m.page_id));
            }
            if m.valid {
                valid += 1;
                if pf.valid != Some(s) {
                    return Err(format!("{id} slot {s} valid but not the valid pointer"));
                }
            }
            max_lsn = max_lsn.max(m.lsn);
        }
        if valid > 1 {
            return Err(format!("{id} has {valid} valid frames"));
        }
        if let Some(v) = pf.valid {
            let m = self.slots[v as usize].expect("valid slot");
            if !m.valid {
                return Err(format!("{id} valid pointer at invalid slot {v}"));
            }
            if m.lsn < max_lsn {
                return Err(format!("{id} valid frame {} older than {max_lsn}", m.lsn));
            }
        }
        Ok(())
    }

    /// Full structural check: positions, slots, index, single-valid-copy.
    pub fn check(&self) -> Result<(), String> {
        if self.occupancy() > self.capacity as usize {
            return Err(format!("occupancy {} > capacity {}", self.occupancy(), self.capacity));
        }
        let mut indexed = 0usize;
        for (id, pf) in &self.by_page {
            indexed += pf.frames.len();
            self.check_page(*id)?;
        }
        if indexed != self.occupancy() {
            return Err(format!("{indexed} frames indexed, occupancy {}", self.occupancy()));
        }
        let occupied = self.slots.iter().filter(|s| s.is_some()).count();
        if occupied != self.occupancy() {
            return Err(format!("{occupied} slots occupied, occupancy {}", self.occupancy()));
        }
        for n in self.front..self.rear {
            let s = self.slot_of(n);
            match self.slots[s as usize] {
                Some(m) if m.frame_index == s => {}
                _ => return Err(format!("position {n} (slot {s}) is not a live frame")),
            }
        }
        Ok(())
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }
}
