use std::process::{Command, Output};

use face_sim::report::{self, SCHEMA};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_face-sim"))
        .args(args)
        .output()
        .expect("spawn face-sim")
}

const SMALL: &[&str] = &["--db-pages", "4000", "--dram-frames", "32", "--ops", "3000"];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let args = with(&["run"], &["--flash-frames", "256", "--seed", "9", "--checked"]);
    let a = sim(&args);
    let b = sim(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_emits_one_row_with_the_fixed_columns() {
    let out = sim(&with(&["run"], &["--flash-frames", "256", "--policy", "lc"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "policy,sync,flash_frames,dram_frames,flash_hit_rate,write_reduction,flash_util,disk_util,flash_iops4k,sim_tput,seed,schema"
    );
    let rows = report::read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].policy, "lc");
    assert_eq!(rows[0].schema, SCHEMA);
}

#[test]
fn json_output_is_one_object() {
    let out = sim(&with(&["run"], &["--flash-frames", "128", "--out", "json"]));
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["policy"], "face-gsc");
    assert_eq!(v["flash_frames"], 128);
}

#[test]
fn sweep_covers_every_cell() {
    let out = sim(&with(
        &["sweep"],
        &["--flash-frames", "64,128,256", "--policy", "face,face-gsc", "--seed", "1,2"],
    ));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = report::read_csv(&out.stdout).unwrap();
    assert_eq!(rows.len(), 12);
    for w in rows.chunks(2) {
        assert_eq!(w[0].policy, "face");
        assert_eq!(w[1].policy, "face-gsc");
        assert_eq!(w[0].flash_frames, w[1].flash_frames);
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.flash_hit_rate));
        assert!(r.sim_tput > 0.0);
    }
}

#[test]
fn compare_runs_the_five_policies() {
    let out = sim(&with(&["compare"], &["--flash-frames", "128"]));
    assert!(out.status.success());
    let rows = report::read_csv(&out.stdout).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, ["lc", "face", "face-gr", "face-gsc", "lru"]);
    assert_eq!(rows[4].sync, "writethrough");
}

#[test]
fn crash_subcommand_reports_each_point() {
    let out = sim(&with(
        &["crash"],
        &["--flash-frames", "256", "--points", "6", "--ckpt-interval", "500"],
    ));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(String::from_utf8_lossy(&out.stderr).contains("recovery"));
}

#[test]
fn breakeven_prints_one_row_per_delta() {
    let out = sim(&["breakeven", "--delta", "0.1,1.0", "--profile", "mlc,disk1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,c_disk,c_flash,exponent,theta");
    assert_eq!(lines.len(), 3);
}

#[test]
fn breakeven_sweep_table() {
    let mut args = vec!["breakeven", "--sweep", "2", "--dram-unit", "16"];
    args.extend_from_slice(SMALL);
    let out = sim(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("k,dram_tpm,flash_tpm\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn workdir_keeps_images_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    let out = sim(&with(&["run"], &["--flash-frames", "64", "--workdir", w]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("flash.img").exists());
    let mem = sim(&with(&["run"], &["--flash-frames", "64"]));
    assert_eq!(out.stdout, mem.stdout);
}

#[test]
fn invalid_combinations_exit_with_usage_error() {
    let cases: &[&[&str]] = &[
        &["--policy", "lc", "--scan-depth", "8"],
        &["--policy", "face", "--scan-depth", "8"],
        &["--policy", "lru", "--seg-cap", "4"],
        &["--write-frac", "1.5"],
        &["--skew", "-1"],
        &["--hot-region", "0"],
        &["--seed", "1,2"],
        &["--flash-frames", "64,128"],
        &["--policy", "bogus"],
        &["--profile", "mlc,slc"],
        &["--disk-scale", "0"],
        &["--dram-frames", "0"],
    ];
    for extra in cases {
        let out = sim(&with(&["run"], extra));
        assert_eq!(out.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    let out = sim(&["breakeven", "--c-disk", "1e-4", "--c-flash", "1e-3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sim(&["breakeven", "--c-disk", "1e-4"]);
    assert_eq!(out.status.code(), Some(2));
}
