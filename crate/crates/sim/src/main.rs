use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use face_core::device::{ClockModel, DeviceProfile};
use face_core::{EngineConfig, Replacement, Storage, SyncPolicy};
use face_sim::analysis::{self, BreakEvenParams, DramFlashSweep};
use face_sim::crash::{self, CrashSpec};
use face_sim::experiments::{self, Matrix, PolicyChoice, COMPARE_SET};
use face_sim::report::{self, Row};
use face_sim::runner;
use face_sim::trace::WorkloadSpec;

#[derive(Parser)]
#[command(name = "face-sim", version, about = "Tiered DRAM/flash/disk page store simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and print its result row.
    Run(Common),
    /// Run every combination of the listed cache sizes, policies and seeds.
    Sweep(Common),
    /// Crash, restart and verify repeatedly; compare against no flash.
    Crash {
        #[command(flatten)]
        common: Common,
        /// Number of crash points.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Break-even flash growth for DRAM growth, or the DRAM-vs-flash table.
    Breakeven(Breakeven),
    /// LC, FaCE, FaCE+GR, FaCE+GSC and write-through LRU on one trace.
    Compare(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Out {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Flash cache frames; a comma list for sweep.
    #[arg(long, value_delimiter = ',', default_value = "2048")]
    flash_frames: Vec<u32>,
    /// DRAM buffer frames; a comma list for sweep.
    #[arg(long, value_delimiter = ',', default_value = "256")]
    dram_frames: Vec<usize>,
    #[arg(long, default_value_t = 32_768)]
    db_pages: u64,
    /// face, face-gr, face-gsc, lc or lru; a comma list for sweep.
    #[arg(long, value_delimiter = ',', default_value = "face-gsc")]
    policy: Vec<Replacement>,
    #[arg(long, default_value = "writeback")]
    sync: SyncPolicy,
    /// Frames per group replacement (face-gr, face-gsc only).
    #[arg(long)]
    scan_depth: Option<u32>,
    /// Device profiles: mlc or slc for flash, disk1 or raid8 for disk.
    #[arg(long, value_delimiter = ',')]
    profile: Vec<DeviceProfile>,
    /// Multiplies every disk profile parameter.
    #[arg(long, default_value_t = 1.0)]
    disk_scale: f64,
    /// serialized: devices never overlap; overlapped: busiest device bounds time.
    #[arg(long, default_value = "overlapped")]
    clock: ClockModel,
    /// Trace seed; a comma list for sweep.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seed: Vec<u64>,
    /// Measured operations, after warm-up.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 0.2)]
    write_frac: f64,
    #[arg(long, default_value_t = 0.8)]
    skew: f64,
    /// Fraction of the database the trace touches.
    #[arg(long, default_value_t = 1.0)]
    hot_region: f64,
    /// Operations between checkpoints, 0 for none.
    #[arg(long, default_value_t = 0)]
    ckpt_interval: u64,
    /// Metadata segment entries (face policies only).
    #[arg(long)]
    seg_cap: Option<u32>,
    #[arg(long, value_enum, default_value = "csv")]
    out: Out,
    /// Keep page images as files under this directory instead of memory.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Verify cache invariants after every operation.
    #[arg(long)]
    checked: bool,
}

#[derive(Args)]
struct Breakeven {
    /// DRAM growth fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0")]
    delta: Vec<f64>,
    /// Share of page accesses that are reads.
    #[arg(long, default_value_t = 1.0)]
    read_weight: f64,
    /// Per-page access times override the profiles.
    #[arg(long, requires = "c_flash")]
    c_disk: Option<f64>,
    #[arg(long, requires = "c_disk")]
    c_flash: Option<f64>,
    /// Run the DRAM-vs-flash throughput table with this many steps.
    #[arg(long)]
    sweep: Option<u32>,
    /// DRAM frames per sweep step.
    #[arg(long, default_value_t = 128)]
    dram_unit: usize,
    /// Flash frames per DRAM frame of equal cost.
    #[arg(long, default_value_t = 10)]
    cost_ratio: u32,
    #[command(flatten)]
    common: Common,
}

fn usage(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn single<T: Copy>(v: &[T], flag: &str) -> T {
    if v.len() != 1 {
        usage(ErrorKind::ArgumentConflict, format!("--{flag} takes one value here"));
    }
    v[0]
}

impl Common {
    fn spec(&self, seed: u64) -> WorkloadSpec {
        let s = WorkloadSpec {
            op_count: self.ops,
            write_fraction: self.write_frac,
            skew: self.skew,
            hot_region: self.hot_region,
            seed,
            db_pages: self.db_pages,
            checkpoint_interval: self.ckpt_interval,
            seg_cap: self.seg_cap,
        };
        if let Err(e) = s.validate() {
            usage(ErrorKind::InvalidValue, e);
        }
        s
    }

    fn profiles(&self) -> (DeviceProfile, DeviceProfile) {
        let mut flash = None;
        let mut disk = None;
        for p in &self.profile {
            let slot = if matches!(p.name.as_str(), "mlc" | "slc") { &mut flash } else { &mut disk };
            if slot.replace(p.clone()).is_some() {
                usage(ErrorKind::ArgumentConflict, "--profile names two flash or two disk devices");
            }
        }
        if !(self.disk_scale.is_finite() && self.disk_scale > 0.0) {
            usage(ErrorKind::InvalidValue, "--disk-scale must be positive");
        }
        let disk = disk.unwrap_or_else(DeviceProfile::raid8);
        let disk = if self.disk_scale == 1.0 { disk } else { disk.scaled(self.disk_scale) };
        (flash.unwrap_or_else(DeviceProfile::mlc), disk)
    }

    /// Rejects flags that do not apply to the chosen policies.
    fn check_policies(&self, policies: &[Replacement]) {
        for p in policies {
            if self.scan_depth.is_some() && !p.uses_scan_depth() {
                usage(
                    ErrorKind::ArgumentConflict,
                    format!("--scan-depth does not apply to policy {p}"),
                );
            }
            if self.seg_cap.is_some() && !p.is_fifo() {
                usage(
                    ErrorKind::ArgumentConflict,
                    format!("--seg-cap does not apply to policy {p}"),
                );
            }
        }
    }

    fn base(&self) -> EngineConfig {
        let (flash_profile, disk_profile) = self.profiles();
        let d = EngineConfig::default();
        EngineConfig {
            db_pages: self.db_pages,
            dram_frames: self.dram_frames[0],
            flash_frames: self.flash_frames[0],
            replacement: self.policy[0],
            sync: self.sync,
            scan_depth: self.scan_depth.unwrap_or(d.scan_depth),
            seg_cap: self.seg_cap,
            flash_profile,
            disk_profile,
            clock: self.clock,
            checked: self.checked,
            ..d
        }
    }

    fn matrix(&self, policies: Vec<PolicyChoice>) -> Matrix {
        Matrix {
            spec: self.spec(self.seed[0]),
            base: self.base(),
            policies,
            flash_frames: self.flash_frames.clone(),
            dram_frames: self.dram_frames.clone(),
            seeds: self.seed.clone(),
        }
    }

    fn validate(&self, cfg: &EngineConfig) {
        if let Err(e) = cfg.validate() {
            usage(ErrorKind::InvalidValue, e);
        }
    }
}

fn emit<T: serde::Serialize>(rows: &[T], out: Out) -> Result<(), Box<dyn std::error::Error>> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match out {
        Out::Csv => report::write_csv(rows, &mut lock)?,
        Out::Json => report::write_json(rows, &mut lock)?,
    }
    lock.flush()?;
    Ok(())
}

fn run_matrix(c: &Common, m: &Matrix) -> Result<(), Box<dyn std::error::Error>> {
    for (_, cfg) in m.cells() {
        c.validate(&cfg);
    }
    let results = experiments::run_matrix(m, c.workdir.as_deref())?;
    let rows: Vec<Row> = results.iter().map(Row::from).collect();
    emit(&rows, c.out)
}

#[derive(serde::Serialize)]
struct ThetaRow {
    delta: f64,
    c_disk: f64,
    c_flash: f64,
    exponent: f64,
    theta: f64,
}

fn real_main(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run(c) => {
            c.check_policies(&c.policy);
            let seed = single(&c.seed, "seed");
            let cfg = EngineConfig {
                flash_frames: single(&c.flash_frames, "flash-frames"),
                dram_frames: single(&c.dram_frames, "dram-frames"),
                replacement: single(&c.policy, "policy"),
                ..c.base()
            };
            c.validate(&cfg);
            let storage = match &c.workdir {
                Some(dir) => Storage::create_dir(dir)?,
                None => Storage::in_memory(),
            };
            let r = runner::run(&c.spec(seed), &cfg, storage)?;
            emit(&[Row::from(&r)], c.out)
        }
        Cmd::Sweep(c) => {
            c.check_policies(&c.policy);
            let policies = c.policy.iter().map(|&p| PolicyChoice::new(p, c.sync)).collect();
            run_matrix(&c, &c.matrix(policies))
        }
        Cmd::Compare(c) => {
            // --scan-depth and --seg-cap apply to the policies that use them
            run_matrix(&c, &c.matrix(COMPARE_SET.to_vec()))
        }
        Cmd::Crash { common: c, points } => {
            c.check_policies(&c.policy);
            let seed = single(&c.seed, "seed");
            let mut spec = c.spec(seed);
            if spec.checkpoint_interval == 0 {
                spec.checkpoint_interval = 2_000;
            }
            let cfg = EngineConfig {
                flash_frames: single(&c.flash_frames, "flash-frames"),
                dram_frames: single(&c.dram_frames, "dram-frames"),
                replacement: single(&c.policy, "policy"),
                ..c.base()
            };
            c.validate(&cfg);
            let r = crash::run_crash_experiment(&CrashSpec {
                workload: spec,
                engine: cfg,
                crash_points: points,
                seed,
            })?;
            emit(&report::crash_rows(&r), c.out)?;
            eprintln!(
                "recovery {:.4}s vs no-flash {:.4}s, {:.1}% of redo reads from flash, at most {} pages scanned (bound {})",
                r.recovery_secs(),
                r.baseline_secs(),
                100.0 * r.flash_fraction(),
                r.max_pages_scanned(),
                2 * r.seg_cap
            );
            Ok(())
        }
        Cmd::Breakeven(b) => {
            if let Some(steps) = b.sweep {
                let c = &b.common;
                let base = EngineConfig {
                    dram_frames: single(&c.dram_frames, "dram-frames"),
                    ..c.base()
                };
                let rows = analysis::dram_vs_flash_sweep(&DramFlashSweep {
                    spec: c.spec(single(&c.seed, "seed")),
                    base,
                    steps,
                    dram_unit: b.dram_unit,
                    cost_ratio: b.cost_ratio,
                })?;
                let stdout = io::stdout();
                analysis::write_sweep_csv(&rows, stdout.lock())?;
                return Ok(());
            }
            let (flash, disk) = b.common.profiles();
            let mut rows = Vec::new();
            for &delta in &b.delta {
                let mut p = BreakEvenParams::from_profiles(delta, &flash, &disk, b.read_weight);
                if let (Some(cd), Some(cf)) = (b.c_disk, b.c_flash) {
                    p.c_disk = cd;
                    p.c_flash = cf;
                }
                let theta = match analysis::break_even_theta(&p) {
                    Ok(t) => t,
                    Err(e) => usage(ErrorKind::InvalidValue, e),
                };
                rows.push(ThetaRow {
                    delta,
                    c_disk: p.c_disk,
                    c_flash: p.c_flash,
                    exponent: p.exponent(),
                    theta,
                });
            }
            emit(&rows, b.common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
