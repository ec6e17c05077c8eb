use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use curriseg::grid::BitMask;
use curriseg::synthdata::{intensity_gap, load_dataset};
use curriseg::Grid;
use curriseg_cli::report::{build_report, read_summary, Report};
use serde_json::Value;
use tempfile::TempDir;

fn curriseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curriseg"))
        .args(args)
        .env("CURRISEG_THREADS", "0")
        .output()
        .expect("spawn curriseg")
}

fn ok(args: &[&str]) -> Output {
    let out = curriseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, n: usize, size: usize, seed: u64, extra: &[&str]) {
    let (n, size, seed) = (n.to_string(), size.to_string(), seed.to_string());
    let mut args = vec!["generate", "--n", &n, "--size", &size, "--seed", &seed, "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Every file under `dir`, relative path → bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const QUICK: [&str; 12] = ["--t", "6", "--t-c", "4", "--warmup", "2", "--K", "2", "--n-test", "6", "--batch-size", "4"];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn generate_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, 20, 16, 7, &[]);
    generate(&b, 20, 16, 7, &[]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 41);
    assert_eq!(sa, sb);
    generate(&b, 20, 16, 8, &[]);
    assert_ne!(sa, snapshot(&b));
}

#[test]
fn generate_reports_corruption_counts() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    let out = ok(&["generate", "--n", "200", "--size", "16", "--outlier-frac", "0.2", "--seed", "1", "--out", p(&dir)]);
    let echo: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echo["corrupted"], 40);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["corrupted"], 40);
    assert_eq!(manifest["outlier_labels"], 40);
}

#[test]
fn alpha_one_hides_the_object() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    generate(&dir, 30, 32, 3, &["--alpha", "1"]);
    let (_, samples) = load_dataset::<f64>(&dir).unwrap();
    let (fg, bg) = intensity_gap(&samples);
    assert!((fg - bg).abs() < 0.05, "gap {}", fg - bg);
}

#[test]
fn invalid_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = curriseg(&["generate", "--alpha", "1.5", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_USAGE]"));
    let out = curriseg(&["bogus"]);
    assert!(!out.status.success());
}

#[test]
fn contradictory_schedule_fails_before_training() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 6, 12, 1, &[]);
    let run = tmp.path().join("run");
    let out = curriseg(&["train", "--data", p(&data), "--out", p(&run), "--t-c", "70", "--t", "70"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_CONFIG]"));
    assert!(!run.join("epochs.csv").exists());
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = curriseg(&["train", "--data", p(&tmp.path().join("nope")), "--out", p(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_IO]"));
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 10, 12, 2, &[]);
    let run = tmp.path().join("run");
    train(&data, &run, &["--diagnostics"]);
    for f in ["manifest.json", "epochs.csv", "timing.csv", "summary.json", "weights.csv", "difficulties.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts.len(), 3);
    let csv = fs::read_to_string(run.join("epochs.csv")).unwrap();
    let phases: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(phases, ["warmup", "warmup", "curriculum", "curriculum", "anti", "anti"]);
    let manifest: Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dataset_manifest_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn defaults_reach_the_summary() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 6, 12, 2, &[]);
    let run = tmp.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--n-test", "2"]);
    let s: Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    let c = &s["config"];
    assert_eq!(c["K"], 10);
    assert_eq!(c["p_min"], 0.6);
    assert_eq!(c["sigma_star"], 0.5);
    assert_eq!(c["gamma"], 0.2);
    assert_eq!(c["w_min_s"], 0.1);
    assert_eq!(c["w_min"], 0.1);
    assert_eq!(c["r"], 0.95);
    assert_eq!(c["t_c"], 60);
    assert_eq!(c["t"], 70);
    assert_eq!(c["warmup_epochs"], 10);
}

#[test]
fn reruns_and_thread_counts_give_identical_logs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 8, 12, 4, &[]);
    let run = tmp.path().join("run");
    train(&data, &run, &[]);
    let first = fs::read(run.join("epochs.csv")).unwrap();
    let first_summary = fs::read(run.join("summary.json")).unwrap();
    train(&data, &run, &[]);
    assert_eq!(first, fs::read(run.join("epochs.csv")).unwrap());
    assert_eq!(first_summary, fs::read(run.join("summary.json")).unwrap());

    let threaded = Command::new(env!("CARGO_BIN_EXE_curriseg"))
        .args(["train", "--data", p(&data), "--out", p(&run)])
        .args(QUICK)
        .env("CURRISEG_THREADS", "3")
        .output()
        .unwrap();
    assert!(threaded.status.success());
    assert_eq!(first, fs::read(run.join("epochs.csv")).unwrap());
}

#[test]
fn baseline_and_curriseg_logs_line_up() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 8, 12, 5, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, &["--mode", "baseline"]);
    train(&data, &b, &["--mode", "curriseg"]);
    let rows = |d: &Path| fs::read_to_string(d.join("epochs.csv")).unwrap().lines().count();
    assert_eq!(rows(&a), rows(&b));
}

#[test]
fn all_pass_radius_matches_sbft_disabled() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 6, 12, 6, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, &["--r", "2.0"]);
    train(&data, &b, &["--without", "sbft"]);
    let ckpt = |d: &Path| fs::read(d.join("checkpoints/epoch_006.json")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
}

fn write_pgm(path: &Path, img: &Grid) {
    img.save_pgm(path).unwrap();
}

#[test]
fn filter_constant_image_is_unchanged() {
    let tmp = TempDir::new().unwrap();
    let (i, o) = (tmp.path().join("in.pgm"), tmp.path().join("out.pgm"));
    write_pgm(&i, &Grid::filled(8, 10, 77.0 / 255.0));
    ok(&["filter", "--in", p(&i), "--out", p(&o), "--r", "0.3"]);
    assert_eq!(fs::read(&i).unwrap(), fs::read(&o).unwrap());
}

#[test]
fn filter_is_idempotent_after_quantization() {
    let tmp = TempDir::new().unwrap();
    let (i, o1, o2) = (tmp.path().join("in.pgm"), tmp.path().join("o1.pgm"), tmp.path().join("o2.pgm"));
    write_pgm(&i, &Grid::from_fn(16, 16, |r, c| ((r * 7 + c * 13) % 17) as f64 / 16.0));
    ok(&["filter", "--in", p(&i), "--out", p(&o1), "--r", "0.5"]);
    ok(&["filter", "--in", p(&o1), "--out", p(&o2), "--r", "0.5"]);
    let a = Grid::load_pgm(&o1).unwrap();
    let b = Grid::load_pgm(&o2).unwrap();
    // one grey level of slack for re-quantization
    assert!(a.max_abs_diff(&b) <= 1.0 / 255.0 + 1e-12);
}

#[test]
fn dump_mask_shows_thirteen_bins() {
    let tmp = TempDir::new().unwrap();
    let (i, o, m) = (tmp.path().join("in.pgm"), tmp.path().join("o.pgm"), tmp.path().join("m.pgm"));
    write_pgm(&i, &Grid::from_fn(8, 8, |r, c| ((r + 2 * c) % 5) as f64 / 4.0));
    let out = ok(&["filter", "--in", p(&i), "--out", p(&o), "--r", "0.5", "--dump-mask", p(&m)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("passband 13 of 64"));
    assert_eq!(BitMask::load_pgm(&m).unwrap().count_ones(), 13);
    let out = ok(&["filter", "--in", p(&i), "--out", p(&o), "--r", "0.5", "--filter", "square", "--dump-mask", p(&m)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("passband 25 of 64"));
}

#[test]
fn filter_unreadable_input_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = curriseg(&["filter", "--in", p(&tmp.path().join("x.pgm")), "--out", p(&tmp.path().join("y.pgm"))]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_IO]"));
}

fn report_of(dirs: &[PathBuf]) -> Report {
    let runs: Vec<_> = dirs.iter().map(|d| (d.clone(), read_summary(d).unwrap())).collect();
    build_report(&runs).unwrap()
}

#[test]
fn report_counts_rows_and_deltas() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 6, 12, 9, &[]);
    let mut dirs = Vec::new();
    for seed in 1..=5 {
        for mode in ["baseline", "curriseg"] {
            let d = tmp.path().join(format!("{mode}-{seed}"));
            train(&data, &d, &["--mode", mode, "--seed", &seed.to_string()]);
            dirs.push(d);
        }
    }
    let out_dir = tmp.path().join("report");
    let mut args = vec!["report", "--out", p(&out_dir)];
    args.extend(dirs.iter().map(|d| p(d)));
    ok(&args);
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let kinds = |k: &str| csv.lines().filter(|l| l.starts_with(&format!("{k},"))).count();
    assert_eq!(kinds("run"), 10);
    assert_eq!(kinds("delta"), 5);

    // recompute deltas straight from the epoch logs
    let last_row = |d: &Path| -> Vec<f64> {
        let text = fs::read_to_string(d.join("epochs.csv")).unwrap();
        let line = text.lines().last().unwrap().to_string();
        line.split(',').rev().take(4).map(|v| v.parse().unwrap()).collect::<Vec<f64>>().into_iter().rev().collect()
    };
    let report = report_of(&dirs);
    for d in &report.paired_deltas {
        let c = last_row(&tmp.path().join(format!("curriseg-{}", d.seed)));
        let b = last_row(&tmp.path().join(format!("baseline-{}", d.seed)));
        let got = [d.delta.mae, d.delta.iou, d.delta.dice, d.delta.f_beta];
        for k in 0..4 {
            assert!((got[k] - (c[k] - b[k])).abs() <= 1e-12);
        }
    }

    let single = report_of(&dirs[..1]);
    let s = read_summary(&dirs[0]).unwrap();
    let m = &single.modes["baseline"];
    assert_eq!(m.mean.iou, s.final_metrics.iou);
    assert_eq!(m.mean.f_beta, s.final_metrics.f_beta);
    assert_eq!(m.std.iou, 0.0);
}

#[test]
fn report_rejects_mismatched_configs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 6, 12, 10, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, &[]);
    train(&data, &b, &["--gamma", "0.3"]);
    let out = curriseg(&["report", p(&a), p(&b)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_REPORT]"));
}
