//! Byte-addressed backing media for the disk image, the flash image and the
//! flash metadata region.
//!
//! Two implementations: [`FileMedia`] over a regular file and [`MemMedia`], a
//! sparse in-memory image used by tests and crash experiments. Unwritten
//! ranges read back as zeros on both.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

pub trait Media: Send {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
    fn write_at(&mut self, offset: u64, buf: &[u8]) -> io::Result<()>;
    fn sync(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<M: Media + ?Sized> Media for Box<M> {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        (**self).read_at(offset, buf)
    }
    fn write_at(&mut self, offset: u64, buf: &[u8]) -> io::Result<()> {
        (**self).write_at(offset, buf)
    }
    fn sync(&mut self) -> io::Result<()> {
        (**self).sync()
    }
}

const CHUNK: u64 = 4096;

/// Sparse in-memory media in 4 KB chunks.
#[derive(Debug, Default, Clone)]
pub struct MemMedia {
    chunks: HashMap<u64, Box<[u8]>>,
}

impl MemMedia {
    pub fn new() -> MemMedia {
        MemMedia::default()
    }

    /// Bytes of backing memory currently allocated.
    pub fn resident_bytes(&self) -> u64 {
        self.chunks.len() as u64 * CHUNK
    }
}

impl Media for MemMedia {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let mut pos = offset;
        let mut done = 0usize;
        while done < buf.len() {
            let chunk = pos / CHUNK;
            let within = (pos % CHUNK) as usize;
            let n = (CHUNK as usize - within).min(buf.len() - done);
            match self.chunks.get(&chunk) {
                Some(data) => buf[done..done + n].copy_from_slice(&data[within..within + n]),
                None => buf[done..done + n].fill(0),
            }
            done += n;
            pos += n as u64;
        }
        Ok(())
    }

    fn write_at(&mut self, offset: u64, buf: &[u8]) -> io::Result<()> {
        let mut pos = offset;
        let mut done = 0usize;
        while done < buf.len() {
            let chunk = pos / CHUNK;
            let within = (pos % CHUNK) as usize;
            let n = (CHUNK as usize - within).min(buf.len() - done);
            let data = self
                .chunks
                .entry(chunk)
                .or_insert_with(|| vec![0u8; CHUNK as usize].into_boxed_slice());
            data[within..within + n].copy_from_slice(&buf[done..done + n]);
            done += n;
            pos += n as u64;
        }
        Ok(())
    }
}

/// A regular file used as media. Reads past EOF return zeros.
#[derive(Debug)]
pub struct FileMedia {
    file: File,
    path: PathBuf,
}

impl FileMedia {
    /// Creates (or truncates) the file at `path`.
    pub fn create(path: impl AsRef<Path>) -> io::Result<FileMedia> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        Ok(FileMedia { file, path })
    }

    /// Opens an existing file without truncating it.
    pub fn open(path: impl AsRef<Path>) -> io::Result<FileMedia> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).write(true).open(&path)?;
        Ok(FileMedia { file, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Media for FileMedia {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let mut done = 0usize;
        while done < buf.len() {
            let n = self.file.read_at(&mut buf[done..], offset + done as u64)?;
            if n == 0 {
                buf[done..].fill(0);
                break;
            }
            done += n;
        }
        Ok(())
    }

    fn write_at(&mut self, offset: u64, buf: &[u8]) -> io::Result<()> {
        self.file.write_all_at(buf, offset)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }
}

/// The three durable images of one store.
pub struct Storage {
    pub disk: Box<dyn Media>,
    pub flash: Box<dyn Media>,
    pub meta: Box<dyn Media>,
}

impl std::fmt::Debug for Storage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Storage").finish_non_exhaustive()
    }
}

pub const DISK_FILE: &str = "disk.img";
pub const FLASH_FILE: &str = "flash.img";
pub const META_FILE: &str = "flash.meta";

impl Storage {
    pub fn in_memory() -> Storage {
        Storage {
            disk: Box::new(MemMedia::new()),
            flash: Box::new(MemMedia::new()),
            meta: Box::new(MemMedia::new()),
        }
    }

    /// Creates fresh `disk.img`, `flash.img` and `flash.meta` in `dir`.
    pub fn create_dir(dir: impl AsRef<Path>) -> io::Result<Storage> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        Ok(Storage {
            disk: Box::new(FileMedia::create(dir.join(DISK_FILE))?),
            flash: Box::new(FileMedia::create(dir.join(FLASH_FILE))?),
            meta: Box::new(FileMedia::create(dir.join(META_FILE))?),
        })
    }

    /// Reopens the images left in `dir` by a previous run.
    pub fn open_dir(dir: impl AsRef<Path>) -> io::Result<Storage> {
        let dir = dir.as_ref();
        Ok(Storage {
            disk: Box::new(FileMedia::open(dir.join(DISK_FILE))?),
            flash: Box::new(FileMedia::open(dir.join(FLASH_FILE))?),
            meta: Box::new(FileMedia::open(dir.join(META_FILE))?),
        })
    }
}
