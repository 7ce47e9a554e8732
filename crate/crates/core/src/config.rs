//! Engine configuration: the when/what/sync/replace axes plus geometry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{ClockModel, DeviceProfile};
use crate::page::{DEFAULT_PAGE_SIZE, HEADER_SIZE};

/// Flash-tier replacement.
///
/// `Basic`, `Gr` and `Gsc` run the multi-version FIFO queue; `Lru2` and
/// `Lru` run the in-place baseline cache (LRU-2 is the lazy-cleaning
/// baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Replacement {
    Basic,
    Gr,
    Gsc,
    Lru2,
    Lru,
}

impl Replacement {
    pub const ALL: [Replacement; 5] = [
        Replacement::Basic,
        Replacement::Gr,
        Replacement::Gsc,
        Replacement::Lru2,
        Replacement::Lru,
    ];

    pub fn is_fifo(self) -> bool {
        matches!(self, Replacement::Basic | Replacement::Gr | Replacement::Gsc)
    }

    pub fn uses_scan_depth(self) -> bool {
        matches!(self, Replacement::Gr | Replacement::Gsc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Replacement::Basic => "face",
            Replacement::Gr => "face-gr",
            Replacement::Gsc => "face-gsc",
            Replacement::Lru2 => "lc",
            Replacement::Lru => "lru",
        }
    }
}

impl fmt::Display for Replacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Replacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Replacement, String> {
        match s.to_ascii_lowercase().as_str() {
            "face" | "basic" | "mvfifo" => Ok(Replacement::Basic),
            "face-gr" | "gr" => Ok(Replacement::Gr),
            "face-gsc" | "gsc" => Ok(Replacement::Gsc),
            "lc" | "lru2" | "lru-2" => Ok(Replacement::Lru2),
            "lru" => Ok(Replacement::Lru),
            other => Err(format!(
                "unknown policy '{other}' (expected face, gr, gsc, lc/lru2 or lru)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SyncPolicy {
    #[default]
    WriteBack,
    WriteThrough,
}

impl SyncPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SyncPolicy::WriteBack => "writeback",
            SyncPolicy::WriteThrough => "writethrough",
        }
    }
}

impl fmt::Display for SyncPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyncPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<SyncPolicy, String> {
        match s.to_ascii_lowercase().as_str() {
            "writeback" | "write-back" | "wb" => Ok(SyncPolicy::WriteBack),
            "writethrough" | "write-through" | "wt" => Ok(SyncPolicy::WriteThrough),
            other => Err(format!("unknown sync policy '{other}'")),
        }
    }
}

/// Which pages evicted from DRAM may enter the flash tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AdmitFilter {
    #[default]
    DirtyAndClean,
    DirtyOnly,
    /// Dirty pages bypass flash and go straight to disk.
    CleanOnly,
}

impl FromStr for AdmitFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<AdmitFilter, String> {
        match s.to_ascii_lowercase().as_str() {
            "all" | "dirty-and-clean" => Ok(AdmitFilter::DirtyAndClean),
            "dirty" | "dirty-only" => Ok(AdmitFilter::DirtyOnly),
            "clean" | "clean-only" => Ok(AdmitFilter::CleanOnly),
            other => Err(format!("unknown admit filter '{other}'")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("page size {0} must be a multiple of 512 and larger than the header")]
    PageSize(usize),
    #[error("the DRAM buffer needs at least one frame")]
    NoDram,
    #[error("the database needs at least one page")]
    NoPages,
    #[error("scan depth {scan_depth} must be between 1 and the flash capacity {capacity}")]
    ScanDepth { scan_depth: u32, capacity: u32 },
    #[error("a multi-version FIFO flash cache needs at least 2 frames, got {0}")]
    FlashTooSmall(u32),
    #[error("segment capacity {seg_cap} must be at least 1 and at most half the flash capacity {capacity}")]
    SegmentCapacity { seg_cap: u32, capacity: u32 },
    #[error("lazy-cleaning threshold {0} must lie in (0, 1]")]
    LazyThreshold(f64),
}

/// Default metadata segment capacity (entries).
pub const DEFAULT_SEGMENT_CAPACITY: u32 = 64_000;

pub const DEFAULT_SCAN_DEPTH: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub page_size: usize,
    pub db_pages: u64,
    pub dram_frames: usize,
    /// Zero disables the flash tier.
    pub flash_frames: u32,
    pub replacement: Replacement,
    pub sync: SyncPolicy,
    pub admit: AdmitFilter,
    pub scan_depth: u32,
    /// Entries per metadata segment; `None` picks a size from the capacity.
    pub seg_cap: Option<u32>,
    /// Appends after which an issued segment flush completes; `None` = seg_cap / 4.
    pub flush_lag: Option<u32>,
    /// Dirty fraction of the baseline cache above which it cleans eagerly.
    pub lazy_clean_threshold: f64,
    pub flash_profile: DeviceProfile,
    pub disk_profile: DeviceProfile,
    pub clock: ClockModel,
    /// Verify cache invariants after every operation.
    pub checked: bool,
    /// Record (page, lsn) for every write that reaches flash or disk.
    pub track_durability: bool,
    /// On an unreadable superblock, rebuild by scanning every flash frame.
    pub full_scan_fallback: bool,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            page_size: DEFAULT_PAGE_SIZE,
            db_pages: 32_768,
            dram_frames: 256,
            flash_frames: 2_048,
            replacement: Replacement::Gsc,
            sync: SyncPolicy::WriteBack,
            admit: AdmitFilter::DirtyAndClean,
            scan_depth: DEFAULT_SCAN_DEPTH,
            seg_cap: None,
            flush_lag: None,
            lazy_clean_threshold: 1.0,
            flash_profile: DeviceProfile::mlc(),
            disk_profile: DeviceProfile::raid8(),
            clock: ClockModel::default(),
            checked: false,
            track_durability: false,
            full_scan_fallback: false,
        }
    }
}

impl EngineConfig {
    pub fn has_flash(&self) -> bool {
        self.flash_frames > 0
    }

    pub fn is_fifo(&self) -> bool {
        self.has_flash() && self.replacement.is_fifo()
    }

    /// Whether the flash tier survives a restart (persisted directory).
    pub fn flash_persistent(&self) -> bool {
        self.is_fifo() && self.admit != AdmitFilter::CleanOnly
    }

    /// Segment capacity actually used: the configured value, or
    /// min(64000, capacity / 16) clamped to at least 1.
    pub fn segment_capacity(&self) -> u32 {
        self.seg_cap.unwrap_or_else(|| {
            DEFAULT_SEGMENT_CAPACITY.min((self.flash_frames / 16).max(1))
        })
    }

    pub fn flush_completion_lag(&self) -> u32 {
        let s = self.segment_capacity();
        self.flush_lag.unwrap_or(s / 4).min(s.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.page_size <= HEADER_SIZE || !self.page_size.is_multiple_of(512) {
            return Err(ConfigError::PageSize(self.page_size));
        }
        if self.dram_frames == 0 {
            return Err(ConfigError::NoDram);
        }
        if self.db_pages == 0 {
            return Err(ConfigError::NoPages);
        }
        if !(self.lazy_clean_threshold > 0.0 && self.lazy_clean_threshold <= 1.0) {
            return Err(ConfigError::LazyThreshold(self.lazy_clean_threshold));
        }
        if !self.has_flash() {
            return Ok(());
        }
        if self.replacement.is_fifo() {
            if self.flash_frames < 2 {
                return Err(ConfigError::FlashTooSmall(self.flash_frames));
            }
            if self.scan_depth == 0 || self.scan_depth > self.flash_frames {
                return Err(ConfigError::ScanDepth {
                    scan_depth: self.scan_depth,
                    capacity: self.flash_frames,
                });
            }
            let s = self.segment_capacity();
            if s == 0 || 2 * s as u64 > self.flash_frames as u64 {
                return Err(ConfigError::SegmentCapacity {
                    seg_cap: s,
                    capacity: self.flash_frames,
                });
            }
        }
        Ok(())
    }
}
