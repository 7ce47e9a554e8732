//! Seeded skewed read/write traces.
//!
//! Page popularity follows a Zipf law over the hot region. Rank `r` maps to
//! a page through a seeded permutation so hot pages are scattered over the
//! database rather than packed at low ids.

use face_core::PageId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOp {
    pub kind: OpKind,
    pub page: PageId,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("write fraction {0} is outside [0, 1]")]
    WriteFraction(f64),
    #[error("skew {0} must be finite and non-negative")]
    Skew(f64),
    #[error("hot region {0} must be in (0, 1]")]
    HotRegion(f64),
    #[error("database must have at least one page")]
    NoPages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Measured operations, warm-up excluded.
    pub op_count: u64,
    pub write_fraction: f64,
    /// Zipf exponent; 0 is uniform.
    pub skew: f64,
    /// Fraction of the database that is ever accessed.
    pub hot_region: f64,
    pub seed: u64,
    pub db_pages: u64,
    /// Operations between database checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    /// Metadata segment capacity override.
    pub seg_cap: Option<u32>,
}

impl Default for WorkloadSpec {
    fn default() -> WorkloadSpec {
        WorkloadSpec {
            op_count: 100_000,
            write_fraction: 0.2,
            skew: 0.8,
            hot_region: 1.0,
            seed: 1,
            db_pages: 32_768,
            checkpoint_interval: 0,
            seg_cap: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(SpecError::WriteFraction(self.write_fraction));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(SpecError::Skew(self.skew));
        }
        if !(self.hot_region > 0.0 && self.hot_region <= 1.0) {
            return Err(SpecError::HotRegion(self.hot_region));
        }
        if self.db_pages == 0 {
            return Err(SpecError::NoPages);
        }
        Ok(())
    }

    /// Pages that can appear in the trace.
    pub fn hot_pages(&self) -> u64 {
        ((self.db_pages as f64 * self.hot_region).ceil() as u64).clamp(1, self.db_pages)
    }

    pub fn generator(&self) -> Result<TraceGen, SpecError> {
        TraceGen::new(self)
    }
}

/// Endless stream of trace operations for one spec. Two generators built
/// from the same spec yield the same sequence.
#[derive(Debug, Clone)]
pub struct TraceGen {
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    pages: Vec<u64>,
    write_fraction: f64,
}

impl TraceGen {
    pub fn new(spec: &WorkloadSpec) -> Result<TraceGen, SpecError> {
        spec.validate()?;
        let mut perm_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        perm_rng.set_stream(1);
        let mut pages: Vec<u64> = (0..spec.db_pages).collect();
        pages.shuffle(&mut perm_rng);
        pages.truncate(spec.hot_pages() as usize);
        let zipf = Zipf::new(pages.len() as f64, spec.skew).map_err(|_| SpecError::Skew(spec.skew))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        Ok(TraceGen {
            rng,
            zipf,
            pages,
            write_fraction: spec.write_fraction,
        })
    }

    /// Page holding popularity rank `rank` (0 = hottest).
    pub fn page_of_rank(&self, rank: usize) -> PageId {
        PageId(self.pages[rank])
    }
}

impl Iterator for TraceGen {
    type Item = TraceOp;

    fn next(&mut self) -> Option<TraceOp> {
        let rank = self.zipf.sample(&mut self.rng) as usize - 1;
        let kind = if self.rng.random::<f64>() < self.write_fraction {
            OpKind::Write
        } else {
            OpKind::Read
        };
        Some(TraceOp {
            kind,
            page: PageId(self.pages[rank]),
        })
    }
}
