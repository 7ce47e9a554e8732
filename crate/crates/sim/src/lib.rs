//! Workload generation, experiment runners and cost analysis on top of
//! `face-core`.

pub mod analysis;
pub mod crash;
pub mod experiments;
pub mod report;
pub mod runner;
pub mod trace;
