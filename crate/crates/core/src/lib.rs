pub mod config;
pub mod device;
pub mod dram;
pub mod flash;
pub mod media;
pub mod meta;
pub mod page;
pub mod baselines;
pub mod engine;

pub use config::{AdmitFilter, EngineConfig, Replacement, SyncPolicy};
pub use engine::{Access, Engine, EngineCounters, EngineError, Source};
pub use media::Storage;
pub use page::{Lsn, PageId, PageImage};
