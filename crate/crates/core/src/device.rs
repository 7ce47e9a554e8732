//! Device cost model.
//!
//! Every tier operation is charged to a [`CostAccumulator`] as an [`IoCharge`].
//! Random operations cost `pages / iops`; sequential operations cost
//! `bytes / (MB/s * 1e6)`. Busy time is accumulated per device and per kind.
//!
//! The simulated clock comes in two flavours (see [`ClockModel`]): the plain
//! sum of all device busy time, or the busiest device's busy time (devices
//! working in parallel, throughput bounded by the bottleneck).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes in one 4 KB-equivalent I/O.
pub const IO_UNIT: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Device {
    Flash,
    Disk,
}

impl Device {
    fn index(self) -> usize {
        match self {
            Device::Flash => 0,
            Device::Disk => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IoKind {
    RandRead,
    RandWrite,
    SeqRead,
    SeqWrite,
}

impl IoKind {
    pub const ALL: [IoKind; 4] = [
        IoKind::RandRead,
        IoKind::RandWrite,
        IoKind::SeqRead,
        IoKind::SeqWrite,
    ];

    fn index(self) -> usize {
        match self {
            IoKind::RandRead => 0,
            IoKind::RandWrite => 1,
            IoKind::SeqRead => 2,
            IoKind::SeqWrite => 3,
        }
    }

    pub fn is_read(self) -> bool {
        matches!(self, IoKind::RandRead | IoKind::SeqRead)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("I/O charge of {bytes} bytes is not a positive multiple of the {page_size}-byte page")]
    BadChargeSize { bytes: u64, page_size: u64 },
    #[error("unknown device profile '{0}' (expected mlc, slc, disk1 or raid8)")]
    UnknownProfile(String),
    #[error("device profile parameters must be positive")]
    NonPositive,
}

/// 4 KB random IOPS and sequential bandwidth of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub rand_read_iops: f64,
    pub rand_write_iops: f64,
    /// MB/s, 1 MB = 10^6 bytes.
    pub seq_read_bw: f64,
    pub seq_write_bw: f64,
}

impl DeviceProfile {
    pub fn new(
        name: impl Into<String>,
        rand_read_iops: f64,
        rand_write_iops: f64,
        seq_read_bw: f64,
        seq_write_bw: f64,
    ) -> Result<DeviceProfile, DeviceError> {
        let p = DeviceProfile {
            name: name.into(),
            rand_read_iops,
            rand_write_iops,
            seq_read_bw,
            seq_write_bw,
        };
        let all_positive = [rand_read_iops, rand_write_iops, seq_read_bw, seq_write_bw]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if all_positive {
            Ok(p)
        } else {
            Err(DeviceError::NonPositive)
        }
    }

    /// Samsung 470 256 GB MLC SSD.
    pub fn mlc() -> DeviceProfile {
        DeviceProfile::new("mlc", 28495.0, 6314.0, 251.33, 242.80).unwrap()
    }

    /// Intel X25-E 32 GB SLC SSD.
    pub fn slc() -> DeviceProfile {
        DeviceProfile::new("slc", 38427.0, 5057.0, 259.2, 195.25).unwrap()
    }

    /// One 15k RPM enterprise disk.
    pub fn disk1() -> DeviceProfile {
        DeviceProfile::new("disk1", 409.0, 343.0, 156.0, 154.0).unwrap()
    }

    /// Eight 15k RPM disks in RAID-0.
    pub fn raid8() -> DeviceProfile {
        DeviceProfile::new("raid8", 2598.0, 2502.0, 848.0, 843.0).unwrap()
    }

    /// Every parameter multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DeviceProfile {
        DeviceProfile {
            name: format!("{}x{}", self.name, factor),
            rand_read_iops: self.rand_read_iops * factor,
            rand_write_iops: self.rand_write_iops * factor,
            seq_read_bw: self.seq_read_bw * factor,
            seq_write_bw: self.seq_write_bw * factor,
        }
    }

    /// Seconds for one charge of `bytes` on this device.
    pub fn cost(&self, kind: IoKind, bytes: u64, page_size: u64) -> f64 {
        let pages = bytes as f64 / page_size as f64;
        match kind {
            IoKind::RandRead => pages / self.rand_read_iops,
            IoKind::RandWrite => pages / self.rand_write_iops,
            IoKind::SeqRead => bytes as f64 / (self.seq_read_bw * 1e6),
            IoKind::SeqWrite => bytes as f64 / (self.seq_write_bw * 1e6),
        }
    }
}

impl FromStr for DeviceProfile {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<DeviceProfile, DeviceError> {
        match s.to_ascii_lowercase().as_str() {
            "mlc" => Ok(DeviceProfile::mlc()),
            "slc" => Ok(DeviceProfile::slc()),
            "disk1" => Ok(DeviceProfile::disk1()),
            "raid8" => Ok(DeviceProfile::raid8()),
            other => Err(DeviceError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoCharge {
    pub device: Device,
    pub kind: IoKind,
    pub bytes: u64,
}

impl IoCharge {
    pub fn new(
        device: Device,
        kind: IoKind,
        bytes: u64,
        page_size: u64,
    ) -> Result<IoCharge, DeviceError> {
        if bytes == 0 || !bytes.is_multiple_of(page_size) {
            return Err(DeviceError::BadChargeSize { bytes, page_size });
        }
        Ok(IoCharge {
            device,
            kind,
            bytes,
        })
    }
}

/// How device busy time maps onto elapsed simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClockModel {
    /// Devices never overlap: elapsed = sum of all busy time.
    Serialized,
    /// Devices work in parallel: elapsed = busy time of the busiest device.
    #[default]
    Overlapped,
}

impl FromStr for ClockModel {
    type Err = String;

    fn from_str(s: &str) -> Result<ClockModel, String> {
        match s {
            "serialized" => Ok(ClockModel::Serialized),
            "overlapped" => Ok(ClockModel::Overlapped),
            other => Err(format!("unknown clock model '{other}'")),
        }
    }
}

impl fmt::Display for ClockModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockModel::Serialized => "serialized",
            ClockModel::Overlapped => "overlapped",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindCounter {
    pub ops: u64,
    pub bytes: u64,
    pub busy: f64,
}

/// Raw per-(device, kind) counters. Copyable so a run can snapshot them at
/// the end of warm-up and report only the measured window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IoCounters {
    cells: [[KindCounter; 4]; 2],
}

impl IoCounters {
    pub fn get(&self, device: Device, kind: IoKind) -> KindCounter {
        self.cells[device.index()][kind.index()]
    }

    pub fn busy(&self, device: Device) -> f64 {
        self.cells[device.index()].iter().map(|c| c.busy).sum()
    }

    pub fn bytes(&self, device: Device) -> u64 {
        self.cells[device.index()].iter().map(|c| c.bytes).sum()
    }

    pub fn ops(&self, device: Device) -> u64 {
        self.cells[device.index()].iter().map(|c| c.ops).sum()
    }

    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        let mut out = IoCounters::default();
        for d in 0..2 {
            for k in 0..4 {
                let (a, b) = (self.cells[d][k], earlier.cells[d][k]);
                out.cells[d][k] = KindCounter {
                    ops: a.ops - b.ops,
                    bytes: a.bytes - b.bytes,
                    busy: a.busy - b.busy,
                };
            }
        }
        out
    }

    pub fn clock(&self, model: ClockModel) -> f64 {
        let flash = self.busy(Device::Flash);
        let disk = self.busy(Device::Disk);
        match model {
            ClockModel::Serialized => flash + disk,
            ClockModel::Overlapped => flash.max(disk),
        }
    }

    pub fn report(&self, model: ClockModel) -> StatsRecord {
        let clock = self.clock(model);
        let dev = |d: Device| {
            let busy = self.busy(d);
            let bytes = self.bytes(d);
            let ops4k = bytes / IO_UNIT;
            let c = |k| self.get(d, k).ops;
            DeviceStats {
                rand_reads: c(IoKind::RandRead),
                rand_writes: c(IoKind::RandWrite),
                seq_reads: c(IoKind::SeqRead),
                seq_writes: c(IoKind::SeqWrite),
                bytes,
                ops4k,
                busy_secs: busy,
                utilization: if clock > 0.0 { busy / clock } else { 0.0 },
                iops4k: if clock > 0.0 { ops4k as f64 / clock } else { 0.0 },
            }
        };
        StatsRecord {
            clock_model: model,
            simulated_secs: clock,
            flash: dev(Device::Flash),
            disk: dev(Device::Disk),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub rand_reads: u64,
    pub rand_writes: u64,
    pub seq_reads: u64,
    pub seq_writes: u64,
    pub bytes: u64,
    /// Bytes transferred in 4 KB units.
    pub ops4k: u64,
    pub busy_secs: f64,
    pub utilization: f64,
    pub iops4k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub clock_model: ClockModel,
    pub simulated_secs: f64,
    pub flash: DeviceStats,
    pub disk: DeviceStats,
}

#[derive(Debug, Clone)]
pub struct CostAccumulator {
    page_size: u64,
    flash: DeviceProfile,
    disk: DeviceProfile,
    clock_model: ClockModel,
    counters: IoCounters,
}

impl CostAccumulator {
    pub fn new(
        page_size: usize,
        flash: DeviceProfile,
        disk: DeviceProfile,
        clock_model: ClockModel,
    ) -> CostAccumulator {
        CostAccumulator {
            page_size: page_size as u64,
            flash,
            disk,
            clock_model,
            counters: IoCounters::default(),
        }
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn profile(&self, device: Device) -> &DeviceProfile {
        match device {
            Device::Flash => &self.flash,
            Device::Disk => &self.disk,
        }
    }

    pub fn clock_model(&self) -> ClockModel {
        self.clock_model
    }

    /// Charges one operation and returns its cost in seconds.
    pub fn charge(&mut self, c: IoCharge) -> f64 {
        let cost = self.profile(c.device).cost(c.kind, c.bytes, self.page_size);
        let cell = &mut self.counters.cells[c.device.index()][c.kind.index()];
        cell.ops += 1;
        cell.bytes += c.bytes;
        cell.busy += cost;
        cost
    }

    /// Charges `pages` whole pages as one operation. Zero pages is a no-op.
    pub fn charge_pages(&mut self, device: Device, kind: IoKind, pages: u64) -> f64 {
        if pages == 0 {
            return 0.0;
        }
        let c = IoCharge::new(device, kind, pages * self.page_size, self.page_size)
            .expect("whole pages");
        self.charge(c)
    }

    /// Charges an arbitrary byte count rounded up to whole pages.
    pub fn charge_bytes_rounded(&mut self, device: Device, kind: IoKind, bytes: u64) -> f64 {
        let pages = bytes.div_ceil(self.page_size);
        self.charge_pages(device, kind, pages)
    }

    pub fn counters(&self) -> IoCounters {
        self.counters
    }

    pub fn simulated_clock(&self) -> f64 {
        self.counters.clock(self.clock_model)
    }

    pub fn report(&self) -> StatsRecord {
        self.counters.report(self.clock_model)
    }
}
