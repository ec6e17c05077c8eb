//! Seed aggregation over finished run directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use curriseg::metrics::MetricReport;
use curriseg::trainer::Mode;

use crate::{Failure, RunSummary, SUMMARY_FORMAT};

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for report.json and report.csv; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub iou: f64,
    pub dice: f64,
    pub f_beta: f64,
}

impl Metrics {
    const NAMES: [&'static str; 4] = ["mae", "iou", "dice", "f_beta"];

    fn values(&self) -> [f64; 4] {
        [self.mae, self.iou, self.dice, self.f_beta]
    }

    fn from_values(v: [f64; 4]) -> Self {
        Self { mae: v[0], iou: v[1], dice: v[2], f_beta: v[3] }
    }
}

impl From<MetricReport> for Metrics {
    fn from(m: MetricReport) -> Self {
        Self { mae: m.mae, iou: m.iou, dice: m.dice, f_beta: m.f_beta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: PathBuf,
    pub mode: Mode,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub runs: usize,
    pub mean: Metrics,
    /// Sample standard deviation; 0 for a single run.
    pub std: Metrics,
}

/// `mode − baseline` for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub mode: Mode,
    pub seed: u64,
    pub delta: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<RunRow>,
    pub modes: BTreeMap<String, ModeStats>,
    pub paired_deltas: Vec<PairedDelta>,
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let s: RunSummary = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    if s.format != SUMMARY_FORMAT {
        return Err(Failure::new("E_FORMAT", format!("{} is not a run summary", path.display())).into());
    }
    Ok(s)
}

fn stats(rows: &[&RunRow]) -> ModeStats {
    let n = rows.len() as f64;
    let mut mean = [0.0; 4];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.metrics.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 4];
    if rows.len() > 1 {
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.metrics.values()).zip(mean) {
                *s += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }
    ModeStats { runs: rows.len(), mean: Metrics::from_values(mean), std: Metrics::from_values(var.map(f64::sqrt)) }
}

/// Builds the report. Runs may differ only in mode and seed.
pub fn build_report(runs: &[(PathBuf, RunSummary)]) -> Result<Report> {
    let key = |s: &RunSummary| {
        let mut c = s.config.clone();
        c.mode = Mode::default();
        c.seed = 0;
        c
    };
    if let Some((first_dir, first)) = runs.first() {
        for (dir, s) in &runs[1..] {
            if key(s) != key(first) {
                return Err(Failure::new(
                    "E_REPORT",
                    format!(
                        "{} and {} differ in more than mode and seed",
                        first_dir.display(),
                        dir.display()
                    ),
                )
                .into());
            }
        }
    }
    let rows: Vec<RunRow> = runs
        .iter()
        .map(|(dir, s)| RunRow { run: dir.clone(), mode: s.mode, seed: s.seed, metrics: s.final_metrics.into() })
        .collect();

    let mut by_mode: BTreeMap<String, Vec<&RunRow>> = BTreeMap::new();
    for r in &rows {
        by_mode.entry(r.mode.to_string()).or_default().push(r);
    }
    let modes = by_mode.iter().map(|(m, rs)| (m.clone(), stats(rs))).collect();

    let mut paired_deltas = Vec::new();
    for r in rows.iter().filter(|r| r.mode != Mode::Baseline) {
        let base = rows.iter().filter(|b| b.mode == Mode::Baseline && b.seed == r.seed).collect::<Vec<_>>();
        if base.len() > 1 {
            return Err(Failure::new("E_REPORT", format!("several baseline runs for seed {}", r.seed)).into());
        }
        if let Some(b) = base.first() {
            let d = r.metrics.values();
            let bv = b.metrics.values();
            paired_deltas.push(PairedDelta {
                mode: r.mode,
                seed: r.seed,
                delta: Metrics::from_values([d[0] - bv[0], d[1] - bv[1], d[2] - bv[2], d[3] - bv[3]]),
            });
        }
    }
    Ok(Report { rows, modes, paired_deltas })
}

/// `kind,mode,seed,mae,iou,dice,f_beta` with kind one of run, mean, std, delta.
pub fn write_report_csv(report: &Report, w: &mut impl Write) -> Result<()> {
    writeln!(w, "kind,mode,seed,{}", Metrics::NAMES.join(","))?;
    let line = |w: &mut dyn Write, kind: &str, mode: &str, seed: String, m: &Metrics| -> std::io::Result<()> {
        let v = m.values();
        writeln!(w, "{kind},{mode},{seed},{},{},{},{}", v[0], v[1], v[2], v[3])
    };
    for r in &report.rows {
        line(w, "run", &r.mode.to_string(), r.seed.to_string(), &r.metrics)?;
    }
    for (mode, s) in &report.modes {
        line(w, "mean", mode, String::new(), &s.mean)?;
        line(w, "std", mode, String::new(), &s.std)?;
    }
    for d in &report.paired_deltas {
        line(w, "delta", &d.mode.to_string(), d.seed.to_string(), &d.delta)?;
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|d| read_summary(d).map(|s| (d.clone(), s)))
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(&runs)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("report.json"), json)?;
            let mut csv = Vec::new();
            write_report_csv(&report, &mut csv)?;
            fs::write(dir.join("report.csv"), csv)?;
        }
        None => print!("{json}"),
    }
    Ok(())
}
