//! Fixed-capacity LRU buffer pool with `dirty` / `fdirty` flags.
//!
//! `dirty` means the buffered copy is newer than the disk copy; `fdirty` means
//! it is newer than the flash-cache copy. Flag transitions:
//!
//! | event                  | dirty     | fdirty |
//! |------------------------|-----------|--------|
//! | fetch from disk        | false     | false  |
//! | fetch from flash cache | flash's   | false  |
//! | update in buffer       | true      | true   |

use std::collections::HashMap;

use thiserror::Error;

use crate::page::{Lsn, PageId, PageImage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DramError {
    #[error("{0} is already resident")]
    DuplicateInstall(PageId),
    #[error("{0} is not resident")]
    NotResident(PageId),
    #[error("update of {id} to {new} does not advance past {current}")]
    LsnRegression { id: PageId, current: Lsn, new: Lsn },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramFrame {
    pub page: PageImage,
    pub dirty: bool,
    pub fdirty: bool,
}

impl DramFrame {
    pub fn id(&self) -> PageId {
        self.page.id
    }
}

/// Where a page being installed was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Disk,
    /// Carries the dirty flag of the flash copy's metadata.
    Flash { dirty: bool },
}

const NIL: usize = usize::MAX;

#[derive(Debug)]
struct Node {
    frame: Option<DramFrame>,
    prev: usize, // towards MRU
    next: usize, // towards LRU
}

#[derive(Debug)]
pub struct DramBuffer {
    capacity: usize,
    index: HashMap<PageId, usize>,
    nodes: Vec<Node>,
    free: Vec<usize>,
    mru: usize,
    lru: usize,
}

impl DramBuffer {
    pub fn new(capacity: usize) -> DramBuffer {
        assert!(capacity > 0, "DRAM buffer needs at least one frame");
        DramBuffer {
            capacity,
            index: HashMap::with_capacity(capacity),
            nodes: Vec::with_capacity(capacity),
            free: Vec::new(),
            mru: NIL,
            lru: NIL,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn contains(&self, id: PageId) -> bool {
        self.index.contains_key(&id)
    }

    /// Returns the frame and makes it most recently used.
    pub fn lookup(&mut self, id: PageId) -> Option<&DramFrame> {
        let slot = *self.index.get(&id)?;
        self.touch(slot);
        self.nodes[slot].frame.as_ref()
    }

    /// Returns the frame without touching recency.
    pub fn peek(&self, id: PageId) -> Option<&DramFrame> {
        let slot = *self.index.get(&id)?;
        self.nodes[slot].frame.as_ref()
    }

    /// Installs a freshly fetched page at the MRU end and returns the LRU
    /// victim if the buffer was full.
    pub fn install(
        &mut self,
        page: PageImage,
        source: FetchSource,
    ) -> Result<Option<DramFrame>, DramError> {
        if self.contains(page.id) {
            return Err(DramError::DuplicateInstall(page.id));
        }
        let victim = if self.is_full() {
            self.pop_lru()
        } else {
            None
        };
        let dirty = match source {
            FetchSource::Disk => false,
            FetchSource::Flash { dirty } => dirty,
        };
        self.push_mru(DramFrame {
            page,
            dirty,
            fdirty: false,
        });
        Ok(victim)
    }

    /// Replaces the body of a resident page with version `lsn`.
    pub fn update(&mut self, id: PageId, body: Box<[u8]>, lsn: Lsn) -> Result<(), DramError> {
        let slot = *self.index.get(&id).ok_or(DramError::NotResident(id))?;
        let frame = self.nodes[slot].frame.as_mut().expect("indexed slot");
        if lsn <= frame.page.lsn {
            return Err(DramError::LsnRegression {
                id,
                current: frame.page.lsn,
                new: lsn,
            });
        }
        frame.page.set_content(lsn, body);
        frame.dirty = true;
        frame.fdirty = true;
        self.touch(slot);
        Ok(())
    }

    /// Removes up to `n` frames from the LRU end, returned LRU first.
    pub fn pull_tail(&mut self, n: usize) -> Vec<DramFrame> {
        let mut out = Vec::with_capacity(n.min(self.len()));
        while out.len() < n {
            match self.pop_lru() {
                Some(f) => out.push(f),
                None => break,
            }
        }
        out
    }

    /// Removes and returns the LRU frame.
    pub fn pop_lru(&mut self) -> Option<DramFrame> {
        if self.lru == NIL {
            return None;
        }
        let slot = self.lru;
        self.unlink(slot);
        let frame = self.nodes[slot].frame.take().expect("linked slot");
        self.index.remove(&frame.id());
        self.free.push(slot);
        Some(frame)
    }

    /// Frame ids from LRU to MRU.
    pub fn ids_lru_first(&self) -> Vec<PageId> {
        self.iter_lru_first().map(|f| f.id()).collect()
    }

    pub fn iter_lru_first(&self) -> impl Iterator<Item = &DramFrame> + '_ {
        let mut cur = self.lru;
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let node = &self.nodes[cur];
            cur = node.prev;
            node.frame.as_ref()
        })
    }

    /// Applies `f` to every frame, LRU first, without touching recency.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut DramFrame)) {
        let mut cur = self.lru;
        while cur != NIL {
            let prev = self.nodes[cur].prev;
            if let Some(frame) = self.nodes[cur].frame.as_mut() {
                f(frame);
            }
            cur = prev;
        }
    }

    /// Sets the flags of a resident frame without touching recency.
    pub fn set_flags(&mut self, id: PageId, dirty: bool, fdirty: bool) -> Result<(), DramError> {
        let slot = *self.index.get(&id).ok_or(DramError::NotResident(id))?;
        let frame = self.nodes[slot].frame.as_mut().expect("indexed slot");
        frame.dirty = dirty;
        frame.fdirty = fdirty;
        Ok(())
    }

    /// Checks structural invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.len() > self.capacity {
            return Err(format!("occupancy {} > capacity {}", self.len(), self.capacity));
        }
        let mut seen = 0usize;
        for f in self.iter_lru_first() {
            seen += 1;
            if f.fdirty && !f.dirty {
                return Err(format!("{} has fdirty without dirty", f.id()));
            }
            if !self.index.contains_key(&f.id()) {
                return Err(format!("{} linked but not indexed", f.id()));
            }
        }
        if seen != self.index.len() {
            return Err(format!("list has {seen} frames, index {}", self.index.len()));
        }
        Ok(())
    }

    fn push_mru(&mut self, frame: DramFrame) {
        let id = frame.id();
        let node = Node {
            frame: Some(frame),
            prev: NIL,
            next: self.mru,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.nodes[s] = node;
                s
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        if self.mru != NIL {
            self.nodes[self.mru].prev = slot;
        }
        self.mru = slot;
        if self.lru == NIL {
            self.lru = slot;
        }
        self.index.insert(id, slot);
    }

    fn unlink(&mut self, slot: usize) {
        let (prev, next) = (self.nodes[slot].prev, self.nodes[slot].next);
        if prev != NIL {
            self.nodes[prev].next = next;
        } else {
            self.mru = next;
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        } else {
            self.lru = prev;
        }
        self.nodes[slot].prev = NIL;
        self.nodes[slot].next = NIL;
    }

    fn touch(&mut self, slot: usize) {
        if self.mru == slot {
            return;
        }
        self.unlink(slot);
        self.nodes[slot].next = self.mru;
        if self.mru != NIL {
            self.nodes[self.mru].prev = slot;
        }
        self.mru = slot;
        if self.lru == NIL {
            self.lru = slot;
        }
    }
}
