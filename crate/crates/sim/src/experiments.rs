//! Configuration matrices: every (seed, DRAM size, flash size, policy)
//! combination run on its own private engine.

use std::path::Path;

use face_core::{EngineConfig, Replacement, Storage, SyncPolicy};

use crate::runner::{self, Result, RunResult};
use crate::trace::WorkloadSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyChoice {
    pub replacement: Replacement,
    pub sync: SyncPolicy,
}

impl PolicyChoice {
    pub const fn new(replacement: Replacement, sync: SyncPolicy) -> PolicyChoice {
        PolicyChoice { replacement, sync }
    }

    pub fn label(&self) -> String {
        match self.sync {
            SyncPolicy::WriteBack => self.replacement.name().to_string(),
            SyncPolicy::WriteThrough => format!("{}-wt", self.replacement.name()),
        }
    }
}

/// Head-to-head set: LC, the three multi-version FIFO variants, and a
/// write-through LRU cache.
pub const COMPARE_SET: [PolicyChoice; 5] = [
    PolicyChoice::new(Replacement::Lru2, SyncPolicy::WriteBack),
    PolicyChoice::new(Replacement::Basic, SyncPolicy::WriteBack),
    PolicyChoice::new(Replacement::Gr, SyncPolicy::WriteBack),
    PolicyChoice::new(Replacement::Gsc, SyncPolicy::WriteBack),
    PolicyChoice::new(Replacement::Lru, SyncPolicy::WriteThrough),
];

#[derive(Debug, Clone)]
pub struct Matrix {
    pub spec: WorkloadSpec,
    pub base: EngineConfig,
    pub policies: Vec<PolicyChoice>,
    pub flash_frames: Vec<u32>,
    pub dram_frames: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Matrix {
    /// Engine configuration of one cell. The scan depth is capped at the
    /// flash capacity so small caches stay valid.
    pub fn config(&self, p: PolicyChoice, flash: u32, dram: usize) -> EngineConfig {
        EngineConfig {
            replacement: p.replacement,
            sync: p.sync,
            flash_frames: flash,
            dram_frames: dram,
            scan_depth: self.base.scan_depth.min(flash.max(1)),
            ..runner::config_for(&self.spec, &self.base)
        }
    }

    pub fn cells(&self) -> Vec<(u64, EngineConfig)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &dram in &self.dram_frames {
                for &flash in &self.flash_frames {
                    for &p in &self.policies {
                        out.push((seed, self.config(p, flash, dram)));
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell in order. With `workdir`, each cell keeps its images in
/// its own subdirectory; otherwise they live in memory.
pub fn run_matrix(m: &Matrix, workdir: Option<&Path>) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    for (seed, cfg) in m.cells() {
        let spec = WorkloadSpec { seed, ..m.spec.clone() };
        let storage = match workdir {
            Some(dir) => Storage::create_dir(dir.join(format!(
                "{}-{}-f{}-d{}-s{}",
                cfg.replacement.name(),
                cfg.sync.name(),
                cfg.flash_frames,
                cfg.dram_frames,
                seed
            )))?,
            None => Storage::in_memory(),
        };
        results.push(runner::run(&spec, &cfg, storage)?);
    }
    Ok(results)
}

/// Mean of `f` over the results matching `keep`.
pub fn mean_of(
    results: &[RunResult],
    keep: impl Fn(&RunResult) -> bool,
    f: impl Fn(&RunResult) -> f64,
) -> f64 {
    let v: Vec<f64> = results.iter().filter(|r| keep(r)).map(f).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_cover_the_matrix_in_order() {
        let m = Matrix {
            spec: WorkloadSpec {
                db_pages: 1000,
                op_count: 500,
                ..WorkloadSpec::default()
            },
            base: EngineConfig::default(),
            policies: vec![COMPARE_SET[0], COMPARE_SET[3]],
            flash_frames: vec![32, 128],
            dram_frames: vec![16],
            seeds: vec![1, 2],
        };
        let cells = m.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].1.replacement, Replacement::Lru2);
        assert_eq!(cells[1].1.scan_depth, 32);
        assert_eq!(cells[3].1.scan_depth, 64);
        assert!(cells.iter().all(|(_, c)| c.db_pages == 1000));
        let r = run_matrix(&m, None).unwrap();
        assert_eq!(r.len(), 8);
        let gsc = mean_of(&r, |x| x.policy == "face-gsc", |x| x.flash_hit_rate);
        assert!((0.0..=1.0).contains(&gsc));
    }

    #[test]
    fn workdir_cells_use_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix {
            spec: WorkloadSpec {
                db_pages: 500,
                op_count: 300,
                ..WorkloadSpec::default()
            },
            base: EngineConfig::default(),
            policies: vec![COMPARE_SET[3]],
            flash_frames: vec![64],
            dram_frames: vec![8],
            seeds: vec![5],
        };
        let on_disk = run_matrix(&m, Some(dir.path())).unwrap();
        let in_mem = run_matrix(&m, None).unwrap();
        assert_eq!(on_disk[0].counters, in_mem[0].counters);
        assert!(dir.path().join("face-gsc-writeback-f64-d8-s5").join("flash.img").exists());
    }

    #[test]
    fn labels() {
        assert_eq!(COMPARE_SET[0].label(), "lc");
        assert_eq!(COMPARE_SET[4].label(), "lru-wt");
    }
}
