//! Persistent flash-cache directory and restart.
//!
//! Every enqueue appends one 24-byte [`MetadataEntry`]. Entries collect in
//! an in-memory segment; a full segment is written to `flash.meta` in one
//! sequential write. The write is modeled as in flight for a few more
//! appends, after which it completes and the superblock is rewritten.
//!
//! `flash.meta` layout (little-endian):
//!
//! ```text
//! [0, P)            superblock slot 0
//! [P, 2P)           superblock slot 1
//! [2P + k*B, ...)   segment ring slot k, B = seg_cap*24 rounded up to P
//! ```
//!
//! Segment `s` (entries at positions `[s*S, (s+1)*S)`) lives in ring slot
//! `s % ring_len`. The superblock records the horizon: how many entries are
//! known to be persisted. Anything past the horizon is rebuilt at restart
//! from the page headers in the flash image. Since at most one segment is in
//! flight and the next one is still filling, that tail never exceeds two
//! segments.

use std::io;

use thiserror::Error;

use crate::config::SyncPolicy;
use crate::device::{CostAccumulator, Device, IoKind};
use crate::flash::{FlashImage, FlashQueue};
use crate::media::Media;
use crate::page::{Lsn, PageHeader, PageId};

pub const ENTRY_SIZE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetadataEntry {
    pub page_id: PageId,
    pub frame_index: u32,
    pub dirty: bool,
    pub lsn: Lsn,
}

impl MetadataEntry {
    pub fn to_bytes(&self) -> [u8; ENTRY_SIZE] {
        let mut b = [0u8; ENTRY_SIZE];
        b[0..8].copy_from_slice(&self.page_id.0.to_le_bytes());
        b[8..12].copy_from_slice(&self.frame_index.to_le_bytes());
        b[12..16].copy_from_slice(&(self.dirty as u32).to_le_bytes());
        b[16..24].copy_from_slice(&self.lsn.0.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> MetadataEntry {
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        MetadataEntry {
            page_id: PageId(u64_at(0)),
            frame_index: u32_at(8),
            dirty: u32_at(12) & 1 != 0,
            lsn: Lsn(u64_at(16)),
        }
    }

    fn header(&self) -> PageHeader {
        PageHeader {
            page_id: self.page_id,
            page_lsn: self.lsn,
        }
    }
}

const SB_MAGIC: u64 = u64::from_le_bytes(*b"FACESB01");
const SB_LEN: usize = 80;
const FLAG_WRITE_THROUGH: u32 = 1;
const FLAG_CLEAN: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuperBlock {
    pub seq: u64,
    pub front: u64,
    /// Entries `[0, horizon)` are persisted in segments.
    pub horizon: u64,
    pub rear: u64,
    pub segments_flushed: u64,
    pub lsn_mark: Lsn,
    pub page_size: u32,
    pub capacity: u32,
    pub scan_depth: u32,
    pub seg_cap: u32,
    pub write_through: bool,
    /// Written by a clean shutdown: rear == horizon, no tail to rebuild.
    pub clean: bool,
}

impl SuperBlock {
    pub fn encode(&self) -> [u8; SB_LEN] {
        let mut b = [0u8; SB_LEN];
        let mut o = 0;
        for v in [
            SB_MAGIC,
            self.seq,
            self.front,
            self.horizon,
            self.rear,
            self.segments_flushed,
            self.lsn_mark.0,
        ] {
            b[o..o + 8].copy_from_slice(&v.to_le_bytes());
            o += 8;
        }
        let flags = if self.write_through { FLAG_WRITE_THROUGH } else { 0 }
            | if self.clean { FLAG_CLEAN } else { 0 };
        for v in [self.page_size, self.capacity, self.scan_depth, self.seg_cap, flags] {
            b[o..o + 4].copy_from_slice(&v.to_le_bytes());
            o += 4;
        }
        let crc = crc32fast::hash(&b[..o]);
        b[o..o + 4].copy_from_slice(&crc.to_le_bytes());
        b
    }

    /// Decodes a superblock; `None` on bad magic or checksum.
    pub fn decode(b: &[u8]) -> Option<SuperBlock> {
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        if b.len() < SB_LEN || u64_at(0) != SB_MAGIC {
            return None;
        }
        if crc32fast::hash(&b[..76]) != u32_at(76) {
            return None;
        }
        let flags = u32_at(72);
        Some(SuperBlock {
            seq: u64_at(8),
            front: u64_at(16),
            horizon: u64_at(24),
            rear: u64_at(32),
            segments_flushed: u64_at(40),
            lsn_mark: Lsn(u64_at(48)),
            page_size: u32_at(56),
            capacity: u32_at(60),
            scan_depth: u32_at(64),
            seg_cap: u32_at(68),
            write_through: flags & FLAG_WRITE_THROUGH != 0,
            clean: flags & FLAG_CLEAN != 0,
        })
    }
}

/// Geometry shared by the log and restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetaGeometry {
    pub page_size: usize,
    pub capacity: u32,
    pub scan_depth: u32,
    pub seg_cap: u32,
    pub flush_lag: u32,
    pub sync: SyncPolicy,
}

impl MetaGeometry {
    /// Ring slots: enough to keep every segment overlapping the last
    /// `capacity` positions plus the in-flight one.
    pub fn ring_len(&self) -> u64 {
        (self.capacity as u64).div_ceil(self.seg_cap as u64) + 3
    }

    pub fn segment_bytes(&self) -> u64 {
        self.seg_cap as u64 * ENTRY_SIZE as u64
    }

    fn segment_slot_bytes(&self) -> u64 {
        self.segment_bytes().div_ceil(self.page_size as u64) * self.page_size as u64
    }

    fn segment_offset(&self, seg: u64) -> u64 {
        2 * self.page_size as u64 + (seg % self.ring_len()) * self.segment_slot_bytes()
    }

    fn write_through(&self) -> bool {
        self.sync == SyncPolicy::WriteThrough
    }
}

/// Queue state echoed into every superblock write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueMark {
    pub front: u64,
    pub rear: u64,
    pub lsn_mark: Lsn,
}

/// What a crash does to a segment flush still in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushFault {
    /// Nothing reached the media.
    Absent,
    /// The first `entries` entries reached the media.
    Torn { entries: u32 },
    /// The whole segment reached the media, the superblock did not.
    Persisted,
}

#[derive(Debug, Clone)]
struct InFlight {
    seg: u64,
    entries: Vec<MetadataEntry>,
    remaining: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogStats {
    pub appends: u64,
    pub segment_flushes: u64,
    pub superblock_writes: u64,
    pub bytes_flushed: u64,
}

pub struct MetaLog {
    media: Box<dyn Media>,
    geo: MetaGeometry,
    /// Position of `current[0]`; a multiple of seg_cap.
    base: u64,
    current: Vec<MetadataEntry>,
    horizon: u64,
    in_flight: Option<InFlight>,
    sb_seq: u64,
    segments_flushed: u64,
    stats: LogStats,
}

impl std::fmt::Debug for MetaLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetaLog")
            .field("base", &self.base)
            .field("current", &self.current.len())
            .field("horizon", &self.horizon)
            .field("in_flight", &self.in_flight.as_ref().map(|i| i.seg))
            .finish_non_exhaustive()
    }
}

impl MetaLog {
    /// Formats an empty directory and writes the first superblock.
    pub fn create(media: Box<dyn Media>, geo: MetaGeometry) -> io::Result<MetaLog> {
        let mut log = MetaLog {
            media,
            geo,
            base: 0,
            current: Vec::new(),
            horizon: 0,
            in_flight: None,
            sb_seq: 0,
            segments_flushed: 0,
            stats: LogStats::default(),
        };
        log.write_superblock(QueueMark::default(), false, None)?;
        Ok(log)
    }

    pub fn geometry(&self) -> MetaGeometry {
        self.geo
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Position the next appended entry must have.
    pub fn next_position(&self) -> u64 {
        self.base + self.current.len() as u64
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Entries in the in-flight segment, if any.
    pub fn in_flight_len(&self) -> Option<usize> {
        self.in_flight.as_ref().map(|f| f.entries.len())
    }

    pub fn stats(&self) -> LogStats {
        self.stats
    }

    pub fn append(
        &mut self,
        e: MetadataEntry,
        mark: QueueMark,
        cost: &mut CostAccumulator,
    ) -> io::Result<()> {
        debug_assert_eq!(
            e.frame_index as u64,
            self.next_position() % self.geo.capacity as u64
        );
        self.stats.appends += 1;
        self.current.push(e);
        if let Some(f) = self.in_flight.as_mut() {
            f.remaining = f.remaining.saturating_sub(1);
            if f.remaining == 0 {
                self.complete_flush(mark, cost)?;
            }
        }
        if self.current.len() == self.geo.seg_cap as usize {
            if self.in_flight.is_some() {
                self.complete_flush(mark, cost)?;
            }
            let entries = std::mem::take(&mut self.current);
            cost.charge_bytes_rounded(
                Device::Flash,
                IoKind::SeqWrite,
                entries.len() as u64 * ENTRY_SIZE as u64,
            );
            self.stats.segment_flushes += 1;
            self.stats.bytes_flushed += entries.len() as u64 * ENTRY_SIZE as u64;
            self.in_flight = Some(InFlight {
                seg: self.base / self.geo.seg_cap as u64,
                entries,
                remaining: self.geo.flush_lag,
            });
            self.base += self.geo.seg_cap as u64;
            if self.geo.flush_lag == 0 {
                self.complete_flush(mark, cost)?;
            }
        }
        Ok(())
    }

    fn write_segment(&mut self, seg: u64, entries: &[MetadataEntry]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(entries.len() * ENTRY_SIZE);
        for e in entries {
            buf.extend_from_slice(&e.to_bytes());
        }
        let off = self.geo.segment_offset(seg);
        self.media.write_at(off, &buf)
    }

    fn complete_flush(&mut self, mark: QueueMark, cost: &mut CostAccumulator) -> io::Result<()> {
        let Some(f) = self.in_flight.take() else {
            return Ok(());
        };
        self.write_segment(f.seg, &f.entries)?;
        self.segments_flushed += 1;
        self.horizon = (f.seg + 1) * self.geo.seg_cap as u64;
        self.write_superblock(mark, false, Some(cost))
    }

    fn write_superblock(
        &mut self,
        mark: QueueMark,
        clean: bool,
        cost: Option<&mut CostAccumulator>,
    ) -> io::Result<()> {
        self.sb_seq += 1;
        let sb = SuperBlock {
            seq: self.sb_seq,
            front: mark.front,
            horizon: self.horizon,
            rear: mark.rear,
            segments_flushed: self.segments_flushed,
            lsn_mark: mark.lsn_mark,
            page_size: self.geo.page_size as u32,
            capacity: self.geo.capacity,
            scan_depth: self.geo.scan_depth,
            seg_cap: self.geo.seg_cap,
            write_through: self.geo.write_through(),
            clean,
        };
        let mut page = vec![0u8; self.geo.page_size];
        page[..SB_LEN].copy_from_slice(&sb.encode());
        let off = (self.sb_seq % 2) * self.geo.page_size as u64;
        self.media.write_at(off, &page)?;
        self.media.sync()?;
        self.stats.superblock_writes += 1;
        if let Some(c) = cost {
            c.charge_pages(Device::Flash, IoKind::RandWrite, 1);
        }
        Ok(())
    }

    /// Clean shutdown: completes any in-flight flush, persists the partial
    /// segment and writes a superblock marked clean.
    pub fn shutdown(mut self, mark: QueueMark, cost: &mut CostAccumulator) -> io::Result<Box<dyn Media>> {
        self.complete_flush(mark, cost)?;
        if !self.current.is_empty() {
            let seg = self.base / self.geo.seg_cap as u64;
            let entries = std::mem::take(&mut self.current);
            self.write_segment(seg, &entries)?;
            cost.charge_bytes_rounded(
                Device::Flash,
                IoKind::SeqWrite,
                entries.len() as u64 * ENTRY_SIZE as u64,
            );
            self.horizon = self.base + entries.len() as u64;
        }
        self.write_superblock(mark, true, Some(cost))?;
        Ok(self.media)
    }

    /// Drops all in-memory state. An in-flight segment reaches the media
    /// as `fault` dictates; the superblock is never updated.
    pub fn crash(mut self, fault: FlushFault) -> io::Result<Box<dyn Media>> {
        if let Some(f) = self.in_flight.take() {
            let n = match fault {
                FlushFault::Absent => 0,
                FlushFault::Torn { entries } => (entries as usize).min(f.entries.len()),
                FlushFault::Persisted => f.entries.len(),
            };
            if n > 0 {
                self.write_segment(f.seg, &f.entries[..n])?;
            }
        }
        Ok(self.media)
    }
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("no readable superblock in the metadata region")]
    CorruptSuperBlock,
    #[error("superblock {field} is {found}, configuration says {expected}")]
    ConfigMismatch {
        field: &'static str,
        found: u64,
        expected: u64,
    },
    #[error("segment entry at position {pos} names frame {frame}, expected {expected}")]
    CorruptSegment { pos: u64, frame: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct RecoveryStats {
    pub superblock_seq: u64,
    pub clean_shutdown: bool,
    /// Segments read from the metadata region.
    pub segments_read: u64,
    /// Of those, segments overlapping the live queue window.
    pub live_segments: u64,
    /// Flash frames whose headers were read to rebuild the tail.
    pub pages_scanned: u64,
    pub entries_loaded: u64,
    pub entries_rebuilt: u64,
    pub frames_restored: u64,
    pub front: u64,
    pub rear: u64,
    /// Simulated seconds of restart I/O.
    pub sim_secs: f64,
}

pub struct Recovered {
    pub queue: FlashQueue,
    pub log: MetaLog,
    pub lsn_mark: Lsn,
    pub stats: RecoveryStats,
}

impl std::fmt::Debug for Recovered {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recovered")
            .field("lsn_mark", &self.lsn_mark)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

/// Reads the newest valid superblock, if any. `Ok(None)` means both slots
/// are blank (never formatted).
pub fn read_superblock(
    meta: &dyn Media,
    page_size: usize,
) -> Result<Option<SuperBlock>, RecoveryError> {
    let mut best: Option<SuperBlock> = None;
    let mut blank = true;
    for slot in 0..2u64 {
        let mut buf = vec![0u8; SB_LEN];
        meta.read_at(slot * page_size as u64, &mut buf)?;
        if buf.iter().any(|&b| b != 0) {
            blank = false;
        }
        if let Some(sb) = SuperBlock::decode(&buf) {
            if best.is_none_or(|b| sb.seq > b.seq) {
                best = Some(sb);
            }
        }
    }
    match best {
        Some(sb) => Ok(Some(sb)),
        None if blank => Ok(None),
        None => Err(RecoveryError::CorruptSuperBlock),
    }
}

fn check_echo(sb: &SuperBlock, geo: &MetaGeometry) -> Result<(), RecoveryError> {
    let pairs = [
        ("page_size", sb.page_size as u64, geo.page_size as u64),
        ("capacity", sb.capacity as u64, geo.capacity as u64),
        ("seg_cap", sb.seg_cap as u64, geo.seg_cap as u64),
        ("write_through", sb.write_through as u64, geo.write_through() as u64),
    ];
    for (field, found, expected) in pairs {
        if found != expected {
            return Err(RecoveryError::ConfigMismatch {
                field,
                found,
                expected,
            });
        }
    }
    Ok(())
}

/// Restart: rebuilds the flash queue and the directory log from the
/// superblock, the persisted segments and, past the horizon, the page
/// headers of at most two segments' worth of frames.
pub fn recover(
    meta: Box<dyn Media>,
    flash: Box<dyn Media>,
    geo: MetaGeometry,
    cost: &mut CostAccumulator,
) -> Result<Recovered, RecoveryError> {
    let clock0 = cost.counters();
    cost.charge_pages(Device::Flash, IoKind::RandRead, 2);
    let Some(sb) = read_superblock(&*meta, geo.page_size)? else {
        let queue = FlashQueue::new(geo.capacity, geo.scan_depth, geo.page_size, flash);
        let log = MetaLog::create(meta, geo)?;
        let stats = RecoveryStats {
            sim_secs: cost.counters().since(&clock0).clock(cost.clock_model()),
            ..RecoveryStats::default()
        };
        return Ok(Recovered {
            queue,
            log,
            lsn_mark: Lsn::ZERO,
            stats,
        });
    };
    check_echo(&sb, &geo)?;

    let c = geo.capacity as u64;
    let s = geo.seg_cap as u64;
    let h = sb.horizon;
    let lo = h.saturating_sub(c);
    let mut stats = RecoveryStats {
        superblock_seq: sb.seq,
        clean_shutdown: sb.clean,
        ..RecoveryStats::default()
    };

    // Persisted entries for positions [lo, h).
    let mut loaded: Vec<MetadataEntry> = Vec::with_capacity((h - lo) as usize);
    if h > lo {
        for seg in lo / s..=(h - 1) / s {
            let seg_lo = (seg * s).max(lo);
            let seg_hi = ((seg + 1) * s).min(h);
            let mut buf = vec![0u8; ((seg + 1) * s).min(h).saturating_sub(seg * s) as usize * ENTRY_SIZE];
            meta.read_at(geo.segment_offset(seg), &mut buf)?;
            cost.charge_bytes_rounded(Device::Flash, IoKind::SeqRead, buf.len() as u64);
            stats.segments_read += 1;
            for pos in seg_lo..seg_hi {
                let i = (pos - seg * s) as usize * ENTRY_SIZE;
                let e = MetadataEntry::from_bytes(&buf[i..i + ENTRY_SIZE]);
                let expected = (pos % c) as u32;
                if e.frame_index != expected {
                    return Err(RecoveryError::CorruptSegment {
                        pos,
                        frame: e.frame_index,
                        expected,
                    });
                }
                loaded.push(e);
            }
        }
    }
    stats.entries_loaded = loaded.len() as u64;
    let loaded_at = |pos: u64| loaded[(pos - lo) as usize];

    // Past the horizon: a slot holds a new frame iff its header differs
    // from what the previous lap left there.
    let image = FlashImage::new(flash, geo.page_size, geo.capacity);
    let mut rebuilt: Vec<MetadataEntry> = Vec::new();
    let mut rear = h;
    if !sb.clean {
        let scan = (2 * s).min(c);
        let mut headers = Vec::with_capacity(scan as usize);
        for n in h..h + scan {
            let hdr = image.read_header((n % c) as u32)?;
            let prev = if n >= c { loaded_at(n - c).header() } else { PageHeader::EMPTY };
            if hdr != prev {
                rear = n + 1;
            }
            headers.push(hdr);
        }
        stats.pages_scanned = scan;
        let first = scan.min(c - h % c);
        cost.charge_pages(Device::Flash, IoKind::SeqRead, first);
        cost.charge_pages(Device::Flash, IoKind::SeqRead, scan - first);
        let dirty = !geo.write_through();
        rebuilt = headers[..(rear - h) as usize]
            .iter()
            .enumerate()
            .map(|(i, hdr)| MetadataEntry {
                page_id: hdr.page_id,
                frame_index: ((h + i as u64) % c) as u32,
                dirty,
                lsn: hdr.page_lsn,
            })
            .collect();
    }
    stats.entries_rebuilt = rebuilt.len() as u64;
    let entry_at = |pos: u64| {
        if pos < h {
            loaded_at(pos)
        } else {
            rebuilt[(pos - h) as usize]
        }
    };

    let front = sb.front.max(rear.saturating_sub(c)).min(rear);
    let window: Vec<MetadataEntry> = (front..rear).map(entry_at).collect();
    stats.live_segments = if front < h { (h - 1) / s - front / s + 1 } else { 0 };
    let lsn_mark = window.iter().map(|e| e.lsn).max().unwrap_or(Lsn::ZERO).max(sb.lsn_mark);

    // Directory log resumes at rear; segments completed by the rebuilt tail
    // are written out now.
    let base = rear / s * s;
    let mut log = MetaLog {
        media: meta,
        geo,
        base,
        current: (base..rear).map(entry_at).collect(),
        horizon: h,
        in_flight: None,
        sb_seq: sb.seq,
        segments_flushed: sb.segments_flushed,
        stats: LogStats::default(),
    };
    let mark = QueueMark {
        front,
        rear,
        lsn_mark,
    };
    let mut seg = h / s;
    while (seg + 1) * s <= base {
        let entries: Vec<MetadataEntry> = (seg * s..(seg + 1) * s).map(entry_at).collect();
        log.write_segment(seg, &entries)?;
        cost.charge_bytes_rounded(Device::Flash, IoKind::SeqWrite, geo.segment_bytes());
        log.segments_flushed += 1;
        log.horizon = (seg + 1) * s;
        seg += 1;
    }
    log.write_superblock(mark, false, Some(cost))?;

    let queue = FlashQueue::restore(
        geo.capacity,
        geo.scan_depth,
        geo.page_size,
        image.into_media(),
        front,
        &window,
    );
    stats.frames_restored = window.len() as u64;
    stats.front = front;
    stats.rear = rear;
    stats.sim_secs = cost.counters().since(&clock0).clock(cost.clock_model());
    Ok(Recovered {
        queue,
        log,
        lsn_mark,
        stats,
    })
}
