//! In-place flash caches used as baselines.
//!
//! One frame per page, overwritten in place on re-admission, so every flash
//! write is random. Replacement is LRU-K: the victim is the page whose K-th
//! most recent reference is oldest; pages with fewer than K references go
//! first, oldest last reference first. K = 2 gives the lazy-cleaning (LC)
//! baseline, K = 1 plain LRU.

use std::collections::{BTreeSet, HashMap};
use std::io;

use crate::device::{CostAccumulator, Device, IoKind};
use crate::media::Media;
use crate::page::{Lsn, PageId, PageImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LruEntry {
    pub slot: u32,
    pub dirty: bool,
    pub lsn: Lsn,
    /// Reference times, most recent first; 0 = none.
    hist: [u64; 2],
}

impl LruEntry {
    fn key(&self, k: usize, id: PageId) -> (u8, u64, PageId) {
        if self.hist[k - 1] == 0 {
            (0, self.hist[0], id)
        } else {
            (1, self.hist[k - 1], id)
        }
    }
}

pub struct LruKCache {
    k: usize,
    capacity: u32,
    page_size: usize,
    entries: HashMap<PageId, LruEntry>,
    order: BTreeSet<(u8, u64, PageId)>,
    free: Vec<u32>,
    clock: u64,
    dirty_count: usize,
    lazy_threshold: f64,
    media: Box<dyn Media>,
}

impl std::fmt::Debug for LruKCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LruKCache")
            .field("k", &self.k)
            .field("capacity", &self.capacity)
            .field("len", &self.entries.len())
            .field("dirty", &self.dirty_count)
            .finish_non_exhaustive()
    }
}

impl LruKCache {
    pub fn new(
        k: usize,
        capacity: u32,
        page_size: usize,
        lazy_threshold: f64,
        media: Box<dyn Media>,
    ) -> LruKCache {
        assert!(k == 1 || k == 2, "K must be 1 or 2");
        assert!(capacity > 0);
        LruKCache {
            k,
            capacity,
            page_size,
            entries: HashMap::new(),
            order: BTreeSet::new(),
            free: (0..capacity).rev().collect(),
            clock: 0,
            dirty_count: 0,
            lazy_threshold,
            media,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty_count
    }

    pub fn entry(&self, id: PageId) -> Option<&LruEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: PageId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn into_media(self) -> Box<dyn Media> {
        self.media
    }

    fn reference(&mut self, id: PageId) {
        self.clock += 1;
        let k = self.k;
        let e = self.entries.get_mut(&id).expect("cached");
        self.order.remove(&e.key(k, id));
        e.hist = [self.clock, e.hist[0]];
        self.order.insert(e.key(k, id));
    }

    fn offset(&self, slot: u32) -> u64 {
        slot as u64 * self.page_size as u64
    }

    fn read_slot(&self, slot: u32) -> io::Result<PageImage> {
        let mut buf = vec![0u8; self.page_size];
        self.media.read_at(self.offset(slot), &mut buf)?;
        Ok(PageImage::deserialize(&buf, self.page_size).expect("page-sized buffer"))
    }

    fn set_dirty(&mut self, id: PageId, dirty: bool) {
        let e = self.entries.get_mut(&id).expect("cached");
        match (e.dirty, dirty) {
            (false, true) => self.dirty_count += 1,
            (true, false) => self.dirty_count -= 1,
            _ => {}
        }
        e.dirty = dirty;
    }

    /// Reads the cached copy (one random flash read) and counts a reference.
    pub fn lookup(
        &mut self,
        id: PageId,
        cost: &mut CostAccumulator,
    ) -> io::Result<Option<(bool, PageImage)>> {
        let Some(e) = self.entries.get(&id).copied() else {
            return Ok(None);
        };
        cost.charge_pages(Device::Flash, IoKind::RandRead, 1);
        let page = self.read_slot(e.slot)?;
        debug_assert_eq!((page.id, page.lsn), (id, e.lsn));
        self.reference(id);
        Ok(Some((e.dirty, page)))
    }

    /// Stages a page evicted from DRAM into the cache. Returns pages that
    /// must be written to disk: a dirty victim, plus anything cleaned
    /// because the dirty fraction passed the lazy-cleaning threshold.
    pub fn admit(
        &mut self,
        page: &PageImage,
        dirty: bool,
        fdirty: bool,
        cost: &mut CostAccumulator,
    ) -> io::Result<Vec<PageImage>> {
        let mut to_disk = Vec::new();
        if let Some(e) = self.entries.get(&page.id).copied() {
            if !fdirty {
                return Ok(to_disk);
            }
            self.media.write_at(self.offset(e.slot), &page.serialize())?;
            cost.charge_pages(Device::Flash, IoKind::RandWrite, 1);
            self.entries.get_mut(&page.id).expect("cached").lsn = page.lsn;
            self.set_dirty(page.id, e.dirty || dirty);
        } else {
            let slot = match self.free.pop() {
                Some(s) => s,
                None => {
                    let (victim, flushed) = self.evict(cost)?;
                    to_disk.extend(flushed);
                    victim
                }
            };
            self.media.write_at(self.offset(slot), &page.serialize())?;
            cost.charge_pages(Device::Flash, IoKind::RandWrite, 1);
            self.entries.insert(
                page.id,
                LruEntry {
                    slot,
                    dirty: false,
                    lsn: page.lsn,
                    hist: [0, 0],
                },
            );
            self.set_dirty(page.id, dirty);
            self.reference(page.id);
        }
        while self.dirty_count as f64 > self.lazy_threshold * self.capacity as f64 {
            let Some(id) = self.coldest_dirty() else { break };
            to_disk.push(self.clean(id, cost)?);
        }
        Ok(to_disk)
    }

    fn coldest_dirty(&self) -> Option<PageId> {
        self.order
            .iter()
            .map(|&(_, _, id)| id)
            .find(|id| self.entries[id].dirty)
    }

    /// Reads a dirty page for a disk write and marks it clean.
    fn clean(&mut self, id: PageId, cost: &mut CostAccumulator) -> io::Result<PageImage> {
        let e = self.entries[&id];
        cost.charge_pages(Device::Flash, IoKind::RandRead, 1);
        let page = self.read_slot(e.slot)?;
        self.set_dirty(id, false);
        Ok(page)
    }

    fn evict(&mut self, cost: &mut CostAccumulator) -> io::Result<(u32, Option<PageImage>)> {
        let &(_, _, id) = self.order.first().expect("full cache has entries");
        let flushed = if self.entries[&id].dirty {
            Some(self.clean(id, cost)?)
        } else {
            None
        };
        let k = self.k;
        let e = self.entries.remove(&id).expect("cached");
        self.order.remove(&e.key(k, id));
        Ok((e.slot, flushed))
    }

    /// Overwrites the cached copy of `page` with a clean version, if cached.
    pub fn refresh_clean(&mut self, page: &PageImage, cost: &mut CostAccumulator) -> io::Result<bool> {
        let Some(e) = self.entries.get(&page.id).copied() else {
            return Ok(false);
        };
        self.media.write_at(self.offset(e.slot), &page.serialize())?;
        cost.charge_pages(Device::Flash, IoKind::RandWrite, 1);
        self.entries.get_mut(&page.id).expect("cached").lsn = page.lsn;
        self.set_dirty(page.id, false);
        Ok(true)
    }

    /// Cleans every dirty page, coldest first, and returns them for disk writes.
    pub fn flush_dirty(&mut self, cost: &mut CostAccumulator) -> io::Result<Vec<PageImage>> {
        let ids: Vec<PageId> = self
            .order
            .iter()
            .map(|&(_, _, id)| id)
            .filter(|id| self.entries[id].dirty)
            .collect();
        ids.into_iter().map(|id| self.clean(id, cost)).collect()
    }

    /// Victim order, next victim first.
    pub fn victim_order(&self) -> Vec<PageId> {
        self.order.iter().map(|&(_, _, id)| id).collect()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.entries.len() > self.capacity as usize {
            return Err(format!("{} entries > capacity {}", self.entries.len(), self.capacity));
        }
        if self.order.len() != self.entries.len() {
            return Err("order and entries disagree".into());
        }
        let mut slots: Vec<u32> = self.entries.values().map(|e| e.slot).collect();
        slots.extend(&self.free);
        slots.sort_unstable();
        if slots != (0..self.capacity).collect::<Vec<_>>() {
            return Err("slots are not a partition of the cache".into());
        }
        let dirty = self.entries.values().filter(|e| e.dirty).count();
        if dirty != self.dirty_count {
            return Err(format!("dirty count {} != {dirty}", self.dirty_count));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{ClockModel, DeviceProfile};
    use crate::media::MemMedia;
    use proptest::prelude::*;

    const PS: usize = 64;

    fn cost() -> CostAccumulator {
        CostAccumulator::new(PS, DeviceProfile::mlc(), DeviceProfile::disk1(), ClockModel::Serialized)
    }

    fn cache(k: usize, cap: u32) -> LruKCache {
        LruKCache::new(k, cap, PS, 1.0, Box::new(MemMedia::new()))
    }

    fn page(id: u64, lsn: u64) -> PageImage {
        PageImage::synthetic(PageId(id), Lsn(lsn), PS).unwrap()
    }

    fn writes(c: &CostAccumulator, d: Device, k: IoKind) -> u64 {
        c.counters().get(d, k).ops
    }

    #[test]
    fn readmitting_a_cached_page_overwrites_in_place() {
        let mut lc = cache(2, 4);
        let mut c = cost();
        lc.admit(&page(1, 1), true, true, &mut c).unwrap();
        let slot = lc.entry(PageId(1)).unwrap().slot;
        let out = lc.admit(&page(1, 2), false, true, &mut c).unwrap();
        assert!(out.is_empty());
        let e = lc.entry(PageId(1)).unwrap();
        assert_eq!((e.slot, e.lsn, e.dirty), (slot, Lsn(2), true));
        assert_eq!(writes(&c, Device::Flash, IoKind::RandWrite), 2);
        assert_eq!(lc.len(), 1);
        // clean re-admission is a no-op
        lc.admit(&page(1, 2), true, false, &mut c).unwrap();
        assert_eq!(writes(&c, Device::Flash, IoKind::RandWrite), 2);
    }

    #[test]
    fn clean_victim_costs_one_random_flash_write() {
        let mut lc = cache(2, 2);
        let mut c = cost();
        lc.admit(&page(1, 1), false, false, &mut c).unwrap();
        lc.admit(&page(2, 1), false, false, &mut c).unwrap();
        let before = c.counters();
        let out = lc.admit(&page(3, 1), false, false, &mut c).unwrap();
        assert!(out.is_empty());
        let d = c.counters().since(&before);
        assert_eq!(d.ops(Device::Flash), 1);
        assert_eq!(d.get(Device::Flash, IoKind::RandWrite).ops, 1);
        assert!(!lc.contains(PageId(1)));
    }

    #[test]
    fn dirty_victim_is_returned_for_disk() {
        let mut lc = cache(1, 1);
        let mut c = cost();
        lc.admit(&page(1, 4), true, true, &mut c).unwrap();
        let out = lc.admit(&page(2, 1), false, false, &mut c).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].id, out[0].lsn), (PageId(1), Lsn(4)));
        assert!(out[0].is_synthetic());
        lc.check().unwrap();
    }

    #[test]
    fn lru2_prefers_pages_seen_once() {
        let mut lc = cache(2, 3);
        let mut c = cost();
        for id in [1, 2, 3] {
            lc.admit(&page(id, 1), false, false, &mut c).unwrap();
        }
        lc.lookup(PageId(1), &mut c).unwrap();
        lc.lookup(PageId(3), &mut c).unwrap();
        // 2 has one reference: evicted although 1 is least recent
        lc.admit(&page(4, 1), false, false, &mut c).unwrap();
        assert!(!lc.contains(PageId(2)));
        // 4 is now the only single-reference page
        assert_eq!(lc.victim_order()[0], PageId(4));
    }

    #[test]
    fn lazy_cleaning_caps_dirty_fraction() {
        let mut lc = LruKCache::new(2, 4, PS, 0.5, Box::new(MemMedia::new()));
        let mut c = cost();
        let mut cleaned = 0;
        for id in 0..4 {
            cleaned += lc.admit(&page(id, 1), true, true, &mut c).unwrap().len();
        }
        assert_eq!(lc.dirty_count(), 2);
        assert_eq!(cleaned, 2);
        lc.check().unwrap();
    }

    // Reference LRU-2: vector of (id, refs) with full reference history.
    proptest! {
        #[test]
        fn victim_matches_brute_force(ops in proptest::collection::vec((0..10u64, any::<bool>()), 1..200)) {
            let mut lc = cache(2, 4);
            let mut c = cost();
            let mut model: Vec<(u64, Vec<u64>)> = Vec::new();
            let mut t = 0u64;
            for (id, lookup) in ops {
                if lookup {
                    let hit = lc.lookup(PageId(id), &mut c).unwrap().is_some();
                    let m = model.iter_mut().find(|e| e.0 == id);
                    prop_assert_eq!(hit, m.is_some());
                    if let Some(m) = m { t += 1; m.1.push(t); }
                } else if !model.iter().any(|e| e.0 == id) {
                    if model.len() == 4 {
                        let victim = model.iter().min_by_key(|(i, h)| {
                            if h.len() < 2 { (0, *h.last().unwrap(), *i) } else { (1, h[h.len() - 2], *i) }
                        }).unwrap().0;
                        model.retain(|e| e.0 != victim);
                    }
                    t += 1;
                    model.push((id, vec![t]));
                    lc.admit(&page(id, 1), false, false, &mut c).unwrap();
                }
                let mut ids: Vec<u64> = model.iter().map(|e| e.0).collect();
                ids.sort_unstable();
                let mut got: Vec<u64> = lc.victim_order().iter().map(|p| p.0).collect();
                got.sort_unstable();
                prop_assert_eq!(got, ids);
                prop_assert!(lc.check().is_ok());
            }
        }
    }
}
