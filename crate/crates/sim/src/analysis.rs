//! Cost-effectiveness arithmetic for trading DRAM against flash, and the
//! more-DRAM versus more-flash experiment.
//!
//! With a hit rate linear in log(buffer size), growing DRAM by a fraction
//! `delta` and growing a flash cache by a fraction `theta` buy the same
//! reduction in I/O time when
//!
//! ```text
//! 1 + theta = (1 + delta) ^ (c_disk / (c_disk - c_flash))
//! ```

use face_core::device::DeviceProfile;
use face_core::{EngineConfig, Replacement, Storage};
use serde::Serialize;
use thiserror::Error;

use crate::runner::{self, SimError};
use crate::trace::WorkloadSpec;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("disk access time {c_disk} must exceed flash access time {c_flash}")]
    DegenerateCosts { c_disk: f64, c_flash: f64 },
    #[error("invalid parameter {name} = {value}")]
    Invalid { name: &'static str, value: f64 },
    #[error("need at least two distinct sizes to fit")]
    TooFewPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakEvenParams {
    /// DRAM increment as a fraction of the current buffer.
    pub delta: f64,
    /// Seconds per page access.
    pub c_disk: f64,
    pub c_flash: f64,
    /// Slope of hit rate against ln(buffer size).
    pub alpha: f64,
    /// Base buffer size in pages.
    pub b: f64,
}

impl BreakEvenParams {
    /// Access times from device profiles. `read_weight` is the read share
    /// of page accesses; 1.0 uses random-read times only.
    pub fn from_profiles(
        delta: f64,
        flash: &DeviceProfile,
        disk: &DeviceProfile,
        read_weight: f64,
    ) -> BreakEvenParams {
        let c = |p: &DeviceProfile| read_weight / p.rand_read_iops + (1.0 - read_weight) / p.rand_write_iops;
        BreakEvenParams {
            delta,
            c_disk: c(disk),
            c_flash: c(flash),
            alpha: 1.0,
            b: 1.0,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.c_disk / (self.c_disk - self.c_flash)
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        let finite_pos = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(AnalysisError::Invalid { name, value: v })
            }
        };
        finite_pos("c_flash", self.c_flash)?;
        finite_pos("c_disk", self.c_disk)?;
        finite_pos("alpha", self.alpha)?;
        finite_pos("b", self.b)?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(AnalysisError::Invalid {
                name: "delta",
                value: self.delta,
            });
        }
        if self.c_disk <= self.c_flash {
            return Err(AnalysisError::DegenerateCosts {
                c_disk: self.c_disk,
                c_flash: self.c_flash,
            });
        }
        Ok(())
    }
}

/// Flash increment fraction with the same payoff as a DRAM increment of
/// `p.delta`.
pub fn break_even_theta(p: &BreakEvenParams) -> Result<f64, AnalysisError> {
    p.validate()?;
    // expm1/ln_1p keep full relative precision for small delta
    Ok((p.exponent() * p.delta.ln_1p()).exp_m1())
}

/// Predicted hit-rate gain from growing a buffer of `b` pages to `size`.
pub fn hit_rate_model(alpha: f64, b: f64, size: f64) -> Result<f64, AnalysisError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(AnalysisError::Invalid { name: "b", value: b });
    }
    if !(size >= b && size.is_finite()) {
        return Err(AnalysisError::Invalid {
            name: "size",
            value: size,
        });
    }
    Ok(alpha * (size / b).ln())
}

/// Least-squares fit of `hit = intercept + alpha * ln(size / b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogFit {
    pub b: f64,
    pub intercept: f64,
    pub alpha: f64,
}

impl LogFit {
    pub fn fit(b: f64, points: &[(f64, f64)]) -> Result<LogFit, AnalysisError> {
        let n = points.len() as f64;
        let xs: Vec<f64> = points.iter().map(|&(s, _)| (s / b).ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if points.len() < 2 || sxx <= 0.0 {
            return Err(AnalysisError::TooFewPoints);
        }
        let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
        let alpha = sxy / sxx;
        Ok(LogFit {
            b,
            intercept: my - alpha * mx,
            alpha,
        })
    }

    pub fn predict(&self, size: f64) -> f64 {
        self.intercept + self.alpha * (size / self.b).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: u32,
    /// Operations per simulated minute with `k` extra DRAM units, no flash.
    pub dram_tpm: f64,
    /// Same with `k * cost_ratio` units of flash and the base DRAM.
    pub flash_tpm: f64,
}

#[derive(Debug, Clone)]
pub struct DramFlashSweep {
    pub spec: WorkloadSpec,
    /// DRAM size and device profiles; replacement is forced per column.
    pub base: EngineConfig,
    pub steps: u32,
    /// Frames in one DRAM unit.
    pub dram_unit: usize,
    /// Flash frames bought for the price of one DRAM frame.
    pub cost_ratio: u32,
}

pub fn dram_vs_flash_sweep(s: &DramFlashSweep) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::with_capacity(s.steps as usize);
    for k in 1..=s.steps {
        let extra = k as usize * s.dram_unit;
        let dram_cfg = EngineConfig {
            dram_frames: s.base.dram_frames + extra,
            flash_frames: 0,
            ..runner::config_for(&s.spec, &s.base)
        };
        let flash_cfg = EngineConfig {
            flash_frames: (extra * s.cost_ratio as usize) as u32,
            replacement: Replacement::Gsc,
            ..runner::config_for(&s.spec, &s.base)
        };
        let d = runner::run(&s.spec, &dram_cfg, Storage::in_memory())?;
        let f = runner::run(&s.spec, &flash_cfg, Storage::in_memory())?;
        rows.push(SweepRow {
            k,
            dram_tpm: d.sim_tput * 60.0,
            flash_tpm: f.sim_tput * 60.0,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["k", "dram_tpm", "flash_tpm"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(delta: f64, c_disk: f64, c_flash: f64) -> BreakEvenParams {
        BreakEvenParams {
            delta,
            c_disk,
            c_flash,
            alpha: 0.1,
            b: 1000.0,
        }
    }

    #[test]
    fn zero_delta_gives_zero_theta() {
        assert_eq!(break_even_theta(&params(0.0, 1e-3, 1e-4)).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_costs_are_rejected() {
        assert!(matches!(
            break_even_theta(&params(1.0, 1e-4, 1e-4)),
            Err(AnalysisError::DegenerateCosts { .. })
        ));
        assert!(matches!(
            break_even_theta(&params(1.0, 1e-5, 1e-4)),
            Err(AnalysisError::DegenerateCosts { .. })
        ));
        assert!(break_even_theta(&params(-0.1, 1e-3, 1e-4)).is_err());
        assert!(break_even_theta(&params(1.0, 1e-3, 0.0)).is_err());
    }

    #[test]
    fn theta_approaches_delta_for_free_flash() {
        let t = break_even_theta(&params(0.5, 1.0, 1e-12)).unwrap();
        assert!((t - 0.5).abs() < 1e-9);
    }

    #[test]
    fn profile_exponents() {
        let mlc = DeviceProfile::mlc();
        let disk = DeviceProfile::disk1();
        let read = BreakEvenParams::from_profiles(1.0, &mlc, &disk, 1.0).exponent();
        let write = BreakEvenParams::from_profiles(1.0, &mlc, &disk, 0.0).exponent();
        assert!((read - 1.0 / (1.0 - 409.0 / 28495.0)).abs() < 1e-12);
        assert!((write - 1.0 / (1.0 - 343.0 / 6314.0)).abs() < 1e-12);
        assert!(read > 1.0 && write > read);
    }

    #[test]
    fn hit_rate_model_closed_forms() {
        assert_eq!(hit_rate_model(0.2, 100.0, 100.0).unwrap(), 0.0);
        let v = hit_rate_model(0.2, 100.0, 200.0).unwrap();
        assert!((v - 0.2 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(hit_rate_model(0.2, 100.0, 50.0).is_err());
        assert!(hit_rate_model(0.2, 0.0, 50.0).is_err());
    }

    #[test]
    fn log_fit_recovers_exact_coefficients() {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&s| (s, 0.3 + 0.07 * (s / 100.0f64).ln()))
            .collect();
        let f = LogFit::fit(100.0, &pts).unwrap();
        assert!((f.alpha - 0.07).abs() < 1e-12);
        assert!((f.intercept - 0.3).abs() < 1e-12);
        assert!((f.predict(1600.0) - (0.3 + 0.07 * 16f64.ln())).abs() < 1e-12);
        assert_eq!(LogFit::fit(100.0, &pts[..1]), Err(AnalysisError::TooFewPoints));
    }

    #[test]
    fn zero_steps_is_an_empty_table() {
        let s = DramFlashSweep {
            spec: WorkloadSpec::default(),
            base: EngineConfig::default(),
            steps: 0,
            dram_unit: 10,
            cost_ratio: 10,
        };
        assert!(dram_vs_flash_sweep(&s).unwrap().is_empty());
        let mut buf = Vec::new();
        write_sweep_csv(&[SweepRow { k: 1, dram_tpm: 2.0, flash_tpm: 3.5 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,dram_tpm,flash_tpm\n1,2.0,3.5\n");
    }
}
