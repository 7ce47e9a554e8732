//! Page images shared by every tier.
//!
//! A page carries a self-identifying 16-byte header so that recovery can
//! parse raw flash frames without any other context:
//!
//! ```text
//! offset  0..8    page_id   (u64, little-endian)
//! offset  8..16   page_lsn  (u64, little-endian)
//! offset 16..     body
//! ```
//!
//! The same layout is used for the disk image and the flash image.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of the page header in bytes.
pub const HEADER_SIZE: usize = 16;

/// Default page size (4 KB).
pub const DEFAULT_PAGE_SIZE: usize = 4096;

/// Logical page number within the backing store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Monotone version counter. `Lsn(0)` means the page was never written.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Lsn(pub u64);

impl Lsn {
    pub const ZERO: Lsn = Lsn(0);

    pub fn next(self) -> Lsn {
        Lsn(self.0 + 1)
    }
}

impl fmt::Display for Lsn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lsn{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PageError {
    #[error("page buffer is {actual} bytes, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("page size {0} is smaller than the {HEADER_SIZE}-byte header")]
    PageTooSmall(usize),
}

/// The fixed-offset header at the start of every page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageHeader {
    pub page_id: PageId,
    pub page_lsn: Lsn,
}

impl PageHeader {
    pub const EMPTY: PageHeader = PageHeader {
        page_id: PageId(0),
        page_lsn: Lsn(0),
    };

    /// Parses a header from the first 16 bytes of `buf`.
    pub fn parse(buf: &[u8]) -> PageHeader {
        let id = u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes"));
        let lsn = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
        PageHeader {
            page_id: PageId(id),
            page_lsn: Lsn(lsn),
        }
    }

    pub fn write_to(&self, buf: &mut [u8]) {
        buf[0..8].copy_from_slice(&self.page_id.0.to_le_bytes());
        buf[8..16].copy_from_slice(&self.page_lsn.0.to_le_bytes());
    }

    /// An all-zero header: an unwritten slot or a never-written page 0.
    pub fn is_empty(&self) -> bool {
        *self == PageHeader::EMPTY
    }
}

/// A fixed-size page: header plus `page_size - HEADER_SIZE` body bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct PageImage {
    pub id: PageId,
    pub lsn: Lsn,
    body: Box<[u8]>,
}

impl fmt::Debug for PageImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PageImage")
            .field("id", &self.id)
            .field("lsn", &self.lsn)
            .field("body_len", &self.body.len())
            .finish()
    }
}

impl PageImage {
    pub fn new(id: PageId, lsn: Lsn, body: impl Into<Box<[u8]>>) -> PageImage {
        PageImage {
            id,
            lsn,
            body: body.into(),
        }
    }

    /// A zero-bodied page of the given size.
    pub fn zeroed(id: PageId, lsn: Lsn, page_size: usize) -> Result<PageImage, PageError> {
        let body_len = body_len(page_size)?;
        Ok(PageImage::new(id, lsn, vec![0u8; body_len]))
    }

    /// Deterministic content for version `lsn` of page `id`.
    ///
    /// Used by the simulator so that any read can be checked byte-for-byte
    /// against the version its header claims to be.
    pub fn synthetic(id: PageId, lsn: Lsn, page_size: usize) -> Result<PageImage, PageError> {
        let body_len = body_len(page_size)?;
        Ok(PageImage::new(id, lsn, synthetic_body(id, lsn, body_len)))
    }

    pub fn header(&self) -> PageHeader {
        PageHeader {
            page_id: self.id,
            page_lsn: self.lsn,
        }
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    pub fn page_size(&self) -> usize {
        HEADER_SIZE + self.body.len()
    }

    /// Replaces body and version in place.
    pub fn set_content(&mut self, lsn: Lsn, body: Box<[u8]>) {
        debug_assert_eq!(body.len(), self.body.len());
        self.lsn = lsn;
        self.body = body;
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.page_size()];
        self.serialize_into(&mut out);
        out
    }

    /// Writes the on-media image into `buf`, which must be exactly `page_size` bytes.
    pub fn serialize_into(&self, buf: &mut [u8]) {
        assert_eq!(buf.len(), self.page_size(), "serialize_into length");
        self.header().write_to(buf);
        buf[HEADER_SIZE..].copy_from_slice(&self.body);
    }

    pub fn deserialize(buf: &[u8], page_size: usize) -> Result<PageImage, PageError> {
        if buf.len() != page_size {
            return Err(PageError::LengthMismatch {
                expected: page_size,
                actual: buf.len(),
            });
        }
        body_len(page_size)?;
        let header = PageHeader::parse(buf);
        Ok(PageImage::new(
            header.page_id,
            header.page_lsn,
            buf[HEADER_SIZE..].to_vec(),
        ))
    }

    /// True when the body equals the synthetic content for this header.
    pub fn is_synthetic(&self) -> bool {
        self.body[..] == synthetic_body(self.id, self.lsn, self.body.len())[..]
    }
}

fn body_len(page_size: usize) -> Result<usize, PageError> {
    page_size
        .checked_sub(HEADER_SIZE)
        .ok_or(PageError::PageTooSmall(page_size))
}

/// Version 0 is all zeros so a never-written page on a sparse image reads
/// back as its own synthetic content.
pub fn synthetic_body(id: PageId, lsn: Lsn, len: usize) -> Box<[u8]> {
    let mut body = vec![0u8; len];
    if lsn == Lsn::ZERO {
        return body.into_boxed_slice();
    }
    let mut x = id.0.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ lsn.0.rotate_left(29);
    for chunk in body.chunks_mut(8) {
        // splitmix64 step
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        let bytes = z.to_le_bytes();
        chunk.copy_from_slice(&bytes[..chunk.len()]);
    }
    body.into_boxed_slice()
}
