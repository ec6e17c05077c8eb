//! Subcommands of the `curriseg` binary.
//!
//! Each command is a plain function from parsed arguments to files on disk so
//! the integration tests can drive them without spawning a process.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use curriseg::curriculum::{DifficultyTable, ScheduleKind};
use curriseg::exec::Executor;
use curriseg::metrics::{evaluate, MetricReport};
use curriseg::spectral::{apply_spectral_mask, FilterKind};
use curriseg::synthdata::{
    corrupt_labels, degrade_dataset, generate_dataset, load_dataset, save_dataset, DatasetManifest, DegradationKind,
    DegradationSpec, Sample, SceneSpec,
};
use curriseg::trainer::{
    run_experiment, write_epoch_csv, write_timing_csv, write_weights_csv, Components, Mode, RunResult, SbftSubset,
    TrainConfig,
};
use curriseg::weighting::{BetaVariant, SigmaVariant, WeightAblation};
use curriseg::Grid;

pub mod report;

/// Mixed into the dataset seed to draw the held-out test set.
pub const TEST_SEED_SALT: u64 = 0x7E57_0000_0000_0000;
pub const RUN_FORMAT: &str = "curriseg-run";
pub const SUMMARY_FORMAT: &str = "curriseg-summary";

/// Error with a fixed machine-readable code, for failures that do not come
/// from the core library.
#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Code printed as `error[CODE]` for a failed command.
pub fn error_code(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<curriseg::Error>() {
            return e.code();
        }
        if cause.is::<std::io::Error>() {
            return "E_IO";
        }
        if cause.is::<serde_json::Error>() {
            return "E_JSON";
        }
    }
    "E_RUN"
}

#[derive(Parser, Debug)]
#[command(name = "curriseg", version, about = "Curriculum segmentation training on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train one model and write a run directory.
    Train(Box<TrainArgs>),
    /// Low-pass filter a PGM image.
    Filter(FilterArgs),
    /// Aggregate final metrics over run directories.
    Report(report::ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Filter(a) => cmd_filter(&a),
        Command::Report(a) => report::cmd_report(&a),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

// --- generate ---------------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    /// Texture similarity between object and background.
    #[arg(long, default_value_t = 0.8, value_parser = unit_interval)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub outlier_frac: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub ambiguous_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct GenerateEcho<'a> {
    out: &'a Path,
    n: usize,
    seed: u64,
    spec: SceneSpec,
    corrupted: usize,
    outlier_labels: usize,
    ambiguous_labels: usize,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Failure::new("E_USAGE", "--n must be positive").into());
    }
    if args.outlier_frac + args.ambiguous_frac > 1.0 {
        return Err(Failure::new("E_USAGE", "--outlier-frac + --ambiguous-frac exceeds 1").into());
    }
    let spec = SceneSpec { size: args.size, alpha: args.alpha, ..SceneSpec::default() };
    spec.validate()?;
    let clean = generate_dataset::<f64>(args.n, &spec, args.seed)?;
    let samples = corrupt_labels(&clean, args.outlier_frac, args.ambiguous_frac, args.seed)?;
    let manifest = DatasetManifest::describe(&samples, spec, args.seed, args.outlier_frac, args.ambiguous_frac);
    save_dataset(&args.out, &samples, &manifest).with_context(|| format!("writing {}", args.out.display()))?;
    let echo = GenerateEcho {
        out: &args.out,
        n: manifest.n,
        seed: manifest.seed,
        spec: manifest.spec,
        corrupted: manifest.corrupted,
        outlier_labels: manifest.outlier_labels,
        ambiguous_labels: manifest.ambiguous_labels,
    };
    println!("{}", serde_json::to_string_pretty(&echo)?);
    Ok(())
}

// --- train ------------------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "curriseg")]
    pub mode: Mode,
    #[arg(long, default_value = "linear")]
    pub schedule: ScheduleKind,
    #[arg(long, default_value = "gaussian")]
    pub sigma_variant: SigmaVariant,
    #[arg(long, default_value = "linear")]
    pub beta_variant: BetaVariant,
    #[arg(long, default_value = "circular")]
    pub filter: FilterKind,
    #[arg(long, default_value = "all")]
    pub sbft_subset: SbftSubset,
    /// Weight factors to replace by 1, e.g. `mu,out`.
    #[arg(long, default_value = "")]
    pub drop: String,
    /// Components to disable, from `wcs,tssw,pue,sbft`.
    #[arg(long, default_value = "")]
    pub without: String,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub p_min: Option<f64>,
    #[arg(long)]
    pub sigma_star: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub w_min_s: Option<f64>,
    #[arg(long)]
    pub w_min: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub r: Option<f64>,
    #[arg(long)]
    pub t_c: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub lr: Option<f64>,
    /// Samples per optimizer step; 0 means full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size of the generated test set, used when `--test-data` is absent.
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    /// Evaluate on this dataset directory instead of a generated test set.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Also write per-sample difficulties and weights.
    #[arg(long)]
    pub diagnostics: bool,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            mode: self.mode,
            k: self.k.unwrap_or(d.k),
            p_min: self.p_min.unwrap_or(d.p_min),
            sigma_star: self.sigma_star.unwrap_or(d.sigma_star),
            gamma: self.gamma.unwrap_or(d.gamma),
            w_min_s: self.w_min_s.unwrap_or(d.w_min_s),
            w_min: self.w_min.unwrap_or(d.w_min),
            r: self.r.unwrap_or(d.r),
            t_c: self.t_c.unwrap_or(d.t_c),
            t: self.t.unwrap_or(d.t),
            warmup_epochs: self.warmup.unwrap_or(d.warmup_epochs),
            lr: self.lr.unwrap_or(d.lr),
            batch_size: match self.batch_size {
                Some(0) => None,
                Some(b) => Some(b),
                None => d.batch_size,
            },
            schedule: self.schedule,
            sigma_variant: self.sigma_variant,
            beta_variant: self.beta_variant,
            filter: self.filter,
            sbft_subset: self.sbft_subset,
            drop: WeightAblation::parse_list(&self.drop)?,
            components: Components::without(&self.without)?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetSource {
    /// `generated` or the dataset directory passed with `--test-data`.
    pub source: String,
    pub n: usize,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Git blob hash (SHA-256 object format) of the dataset's manifest.json.
    pub dataset_manifest_hash: String,
    pub test_set: TestSetSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub blur: MetricReport,
    pub noise: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub mode: Mode,
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: usize,
    pub gradient_evaluations: usize,
    #[serde(rename = "final")]
    pub final_metrics: MetricReport,
    pub robustness: Robustness,
}

/// `sha256("blob <len>\0" ‖ bytes)`, hex encoded.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Blur and noise strengths of the robustness evaluation.
pub const BLUR_STRENGTH: f64 = 1.0;
pub const NOISE_STRENGTH: f64 = 0.15;

pub fn robustness(params: &curriseg::Params, test: &[Sample<f64>], seed: u64, exec: &Executor) -> Result<Robustness> {
    let spec = |kind, strength| DegradationSpec { kind, strength, ratio: 1.0 };
    let blur = degrade_dataset(test, &spec(DegradationKind::Blur, BLUR_STRENGTH), seed)?;
    let noise = degrade_dataset(test, &spec(DegradationKind::Noise, NOISE_STRENGTH), seed)?;
    Ok(Robustness { blur: evaluate(params, &blur, exec)?, noise: evaluate(params, &noise, exec)? })
}

/// Clean test scenes from the same family as the training data, quantized as
/// if read back from PGM.
pub fn generated_test_set(manifest: &DatasetManifest, n: usize) -> Result<(Vec<Sample<f64>>, u64)> {
    let seed = manifest.seed ^ TEST_SEED_SALT;
    let samples = generate_dataset::<f64>(n, &manifest.spec, seed)?
        .into_iter()
        .map(|s| {
            let q: Grid = s.image.quantize_u8();
            s.with_image(q)
        })
        .collect();
    Ok((samples, seed))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> curriseg::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunSummary> {
    let config = args.config()?;
    let manifest_bytes =
        fs::read(args.data.join("manifest.json")).with_context(|| format!("reading dataset {}", args.data.display()))?;
    let (manifest, train) = load_dataset::<f64>(&args.data)?;
    let (test, test_set) = match &args.test_data {
        Some(dir) => {
            let (_, t) = load_dataset::<f64>(dir)?;
            let n = t.len();
            (t, TestSetSource { source: dir.display().to_string(), n, seed: None })
        }
        None => {
            if args.n_test == 0 {
                return Err(Failure::new("E_USAGE", "--n-test must be positive").into());
            }
            let (t, seed) = generated_test_set(&manifest, args.n_test)?;
            (t, TestSetSource { source: "generated".into(), n: args.n_test, seed: Some(seed) })
        }
    };
    let run_manifest = RunManifest {
        format: RUN_FORMAT.into(),
        version: 1,
        config: config.clone(),
        dataset: args.data.clone(),
        out: args.out.clone(),
        dataset_manifest_hash: git_blob_hash(&manifest_bytes),
        test_set,
    };

    let exec = Executor::from_env()?;
    let result = run_experiment(&config, &train, &test, &exec)?;
    let summary = RunSummary {
        format: SUMMARY_FORMAT.into(),
        mode: config.mode,
        seed: config.seed,
        config: config.clone(),
        epochs: result.logs.len(),
        gradient_evaluations: result.gradient_evaluations(),
        final_metrics: result.final_metrics().context("run produced no epochs")?,
        robustness: robustness(&result.params, &test, config.seed, &exec)?,
    };
    write_run_dir(&args.out, &run_manifest, &summary, &result, args.diagnostics)?;
    Ok(summary)
}

fn write_run_dir(
    out: &Path,
    manifest: &RunManifest,
    summary: &RunSummary,
    result: &RunResult<f64>,
    diagnostics: bool,
) -> Result<()> {
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    for entry in fs::read_dir(&ckpt_dir)? {
        let path = entry?.path();
        let stale = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("epoch_"));
        if stale {
            fs::remove_file(&path)?;
        }
    }
    write_json(&out.join("manifest.json"), manifest)?;
    write_file(&out.join("epochs.csv"), |w| write_epoch_csv(&result.logs, w))?;
    write_file(&out.join("timing.csv"), |w| write_timing_csv(&result.logs, w))?;
    write_json(&out.join("summary.json"), summary)?;
    for c in &result.checkpoints {
        write_file(&ckpt_dir.join(format!("epoch_{:03}.json", c.epoch)), |w| c.write(w))?;
    }
    if diagnostics {
        write_file(&out.join("difficulties.csv"), |w| {
            DifficultyTable::write_csv_header(w)?;
            result.difficulty_tables.iter().try_for_each(|t| t.write_csv_rows(w))
        })?;
        write_file(&out.join("weights.csv"), |w| write_weights_csv(&result.sample_weights, w))?;
    }
    Ok(())
}

// --- filter -----------------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.95, value_parser = positive)]
    pub r: f64,
    #[arg(long, default_value = "circular")]
    pub filter: FilterKind,
    /// Position within the anti phase for the progressive filter.
    #[arg(long, default_value_t = 1.0, value_parser = unit_interval)]
    pub epoch_fraction: f64,
    /// Also write the passband as a 0/255 PGM.
    #[arg(long)]
    pub dump_mask: Option<PathBuf>,
}

pub fn cmd_filter(args: &FilterArgs) -> Result<()> {
    let image: Grid =
        Grid::load_pgm(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mask = args.filter.mask(image.height(), image.width(), args.r, args.epoch_fraction)?;
    let filtered = apply_spectral_mask(&image, &mask)?.clamp01();
    filtered.save_pgm(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.dump_mask {
        mask.save_pgm(path).with_context(|| format!("writing {}", path.display()))?;
        println!("passband {} of {}", mask.count_ones(), mask.len());
    }
    Ok(())
}
