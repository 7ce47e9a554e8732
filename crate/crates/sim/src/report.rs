//! Flat output rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::crash::CrashReport;
use crate::runner::RunResult;

/// Output format version, written into every row.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub policy: String,
    pub sync: String,
    pub flash_frames: u32,
    pub dram_frames: usize,
    pub flash_hit_rate: f64,
    pub write_reduction: f64,
    pub flash_util: f64,
    pub disk_util: f64,
    pub flash_iops4k: f64,
    pub sim_tput: f64,
    pub seed: u64,
    pub schema: u32,
}

impl From<&RunResult> for Row {
    fn from(r: &RunResult) -> Row {
        Row {
            policy: r.policy.clone(),
            sync: r.sync.clone(),
            flash_frames: r.flash_frames,
            dram_frames: r.dram_frames,
            flash_hit_rate: r.flash_hit_rate,
            write_reduction: r.write_reduction,
            flash_util: r.stats.flash.utilization,
            disk_util: r.stats.disk.utilization,
            flash_iops4k: r.stats.flash.iops4k,
            sim_tput: r.sim_tput,
            seed: r.seed,
            schema: SCHEMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrashRow {
    pub index: usize,
    pub at_op: u64,
    pub fault: String,
    pub pages_scanned: u64,
    pub frames_restored: u64,
    pub entries_rebuilt: u64,
    pub redo_pages: u64,
    pub redo_flash_reads: u64,
    pub redo_disk_reads: u64,
    pub recovery_secs: f64,
    pub baseline_secs: f64,
    pub schema: u32,
}

pub fn crash_rows(r: &CrashReport) -> Vec<CrashRow> {
    r.points
        .iter()
        .map(|p| CrashRow {
            index: p.index,
            at_op: p.at_op,
            fault: p.fault.clone(),
            pages_scanned: p.recovery.pages_scanned,
            frames_restored: p.recovery.frames_restored,
            entries_rebuilt: p.recovery.entries_rebuilt,
            redo_pages: p.redo_pages,
            redo_flash_reads: p.redo_flash_reads,
            redo_disk_reads: p.redo_disk_reads,
            recovery_secs: p.recovery_secs,
            baseline_secs: p.baseline_secs,
            schema: SCHEMA,
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize, W: Write>(rows: &[T], mut w: W) -> serde_json::Result<()> {
    if rows.len() == 1 {
        serde_json::to_writer_pretty(&mut w, &rows[0])?;
    } else {
        serde_json::to_writer_pretty(&mut w, rows)?;
    }
    writeln!(w).map_err(serde_json::Error::io)
}

pub fn read_csv(data: &[u8]) -> csv::Result<Vec<Row>> {
    csv::Reader::from_reader(data).deserialize().collect()
}
