//! Epoch loop for the two-phase schedule.
//!
//! A curriseg run is warm-up, then curriculum selection, then anti-curriculum
//! fine-tuning on low-pass filtered inputs. `baseline` trains on everything
//! with unit weights for the same number of epochs and `reversed` runs the
//! filtered phase first.
//!
//! Epochs are numbered from 1. The curriculum has its own clock
//! `t = epoch − warm-up end`, running `1..=t_c − warmup_epochs`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curriculum::{
    active_subset, evaluate_difficulties, selection_fraction, DifficultyTable, ScheduleKind, ScheduleVariant,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{BitMask, Grid2D, SeededRng};
use crate::loss::{curriculum_loss, sigmoid_grid};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{adam_step, backward_pass, forward_pass, AdamState, Checkpoint, ConvNetParams};
use crate::scalar::Real;
use crate::spectral::{apply_spectral_mask, FilterKind};
use crate::synthdata::Sample;
use crate::weighting::{
    pixel_weight_matrix, sample_weights, temporal_stats, BetaVariant, DifficultyBuffer, PixelWeightConfig,
    SampleWeightParams, SampleWeightStats, SigmaVariant, WeightAblation,
};

const BATCH_STREAM: u64 = 0xBA7C << 32;
const SUBSET_STREAM: u64 = 0x5B5E << 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    #[default]
    Curriseg,
    Reversed,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "curriseg" => Ok(Self::Curriseg),
            "reversed" => Ok(Self::Reversed),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Curriseg => "curriseg",
            Self::Reversed => "reversed",
        })
    }
}

/// Which samples get low-pass filtered during the anti-curriculum phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SbftSubset {
    #[default]
    All,
    /// The harder half under the latest difficulty table.
    Hard,
    /// A fresh random half every epoch.
    Random,
}

impl FromStr for SbftSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "hard" => Ok(Self::Hard),
            "random" => Ok(Self::Random),
            other => Err(Error::config(format!("unknown filter subset {other:?}"))),
        }
    }
}

/// Switches for the component breakdown. A disabled component falls back to
/// its neutral form: all samples admitted, unit sample weights, unit pixel
/// weights, unfiltered inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub wcs: bool,
    pub tssw: bool,
    pub pue: bool,
    pub sbft: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self { wcs: true, tssw: true, pue: true, sbft: true }
    }
}

impl Components {
    /// All components except those in a comma-separated list.
    pub fn without(list: &str) -> Result<Self> {
        let mut c = Self::default();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "wcs" => c.wcs = false,
                "tssw" => c.tssw = false,
                "pue" => c.pue = false,
                "sbft" => c.sbft = false,
                other => return Err(Error::config(format!("unknown component {other:?}"))),
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Checkpoint refresh interval and difficulty buffer length.
    #[serde(rename = "K")]
    pub k: usize,
    pub p_min: f64,
    pub sigma_star: f64,
    pub gamma: f64,
    pub w_min_s: f64,
    pub w_min: f64,
    pub r: f64,
    /// Last curriculum epoch.
    pub t_c: usize,
    /// Total epochs.
    pub t: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    /// `None` is full-batch.
    pub batch_size: Option<usize>,
    pub schedule: ScheduleKind,
    pub sigma_variant: SigmaVariant,
    pub beta_variant: BetaVariant,
    pub filter: FilterKind,
    pub sbft_subset: SbftSubset,
    pub drop: WeightAblation,
    pub components: Components,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Curriseg,
            k: 10,
            p_min: 0.6,
            sigma_star: 0.5,
            gamma: 0.2,
            w_min_s: 0.1,
            w_min: 0.1,
            r: 0.95,
            t_c: 60,
            t: 70,
            warmup_epochs: 10,
            lr: 0.005,
            batch_size: Some(10),
            schedule: ScheduleKind::Linear,
            sigma_variant: SigmaVariant::Gaussian,
            beta_variant: BetaVariant::Linear,
            filter: FilterKind::Circular,
            sbft_subset: SbftSubset::All,
            drop: WeightAblation::default(),
            components: Components::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if !(self.warmup_epochs < self.t_c && self.t_c < self.t) {
            return fail(format!(
                "need warmup_epochs < t_c < t, got {} / {} / {}",
                self.warmup_epochs, self.t_c, self.t
            ));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return fail(format!("p_min {} outside (0, 1]", self.p_min));
        }
        for (name, v) in [("w_min_s", self.w_min_s), ("w_min", self.w_min)] {
            if !(v > 0.0 && v < 1.0) {
                return fail(format!("{name} {v} outside (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.sigma_star) {
            return fail(format!("sigma_star {} outside [0, 1]", self.sigma_star));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma {} must be positive", self.gamma));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return fail(format!("r {} must be positive", self.r));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == Some(0) {
            return fail("batch size must be at least 1".into());
        }
        Ok(())
    }

    /// Length of the curriculum clock.
    pub fn curriculum_len(&self) -> usize {
        self.t_c - self.warmup_epochs
    }

    pub fn anti_len(&self) -> usize {
        self.t - self.t_c
    }

    pub fn schedule_variant(&self) -> ScheduleVariant {
        ScheduleVariant { kind: self.schedule, p_min: self.p_min, t_c: self.curriculum_len() }
    }

    pub fn weight_params(&self) -> SampleWeightParams {
        SampleWeightParams {
            sigma_star: self.sigma_star,
            gamma: self.gamma,
            w_min_s: self.w_min_s,
            sigma_variant: self.sigma_variant,
            ablation: self.drop,
        }
    }

    pub fn pixel_config(&self) -> PixelWeightConfig {
        PixelWeightConfig { w_min: self.w_min, t_c: self.curriculum_len(), beta_variant: self.beta_variant }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Curriculum,
    Anti,
    /// Baseline training.
    Plain,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Warmup => "warmup",
            Self::Curriculum => "curriculum",
            Self::Anti => "anti",
            Self::Plain => "plain",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Samples that received a gradient this epoch.
    pub active: usize,
    pub selection_fraction: f64,
    /// Checkpoint behind this epoch's difficulty table, curriculum only.
    pub checkpoint_epoch: Option<usize>,
    /// Samples whose input was low-pass filtered, anti phase only.
    pub filtered: usize,
    pub mean_sample_weight: f64,
    pub mean_pixel_weight: f64,
    pub train_loss: f64,
    pub optimizer_steps: usize,
    pub test: Option<MetricReport>,
    /// Kept out of the CSV so reruns compare byte for byte.
    pub wall_clock_seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,phase,active,selection_fraction,checkpoint_epoch,filtered,\
mean_sample_weight,mean_pixel_weight,train_loss,optimizer_steps,test_mae,test_iou,test_dice,test_f_beta";

impl EpochLog {
    pub fn write_csv_row(&self, w: &mut impl Write) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        write!(
            w,
            "{},{},{},{},{},{},{},{},{},{},",
            self.epoch,
            self.phase,
            self.active,
            self.selection_fraction,
            self.checkpoint_epoch.map(|e| e.to_string()).unwrap_or_default(),
            self.filtered,
            self.mean_sample_weight,
            self.mean_pixel_weight,
            self.train_loss,
            self.optimizer_steps,
        )?;
        writeln!(
            w,
            "{},{},{},{}",
            opt(self.test.map(|m| m.mae)),
            opt(self.test.map(|m| m.iou)),
            opt(self.test.map(|m| m.dice)),
            opt(self.test.map(|m| m.f_beta)),
        )?;
        Ok(())
    }
}

pub fn write_epoch_csv(logs: &[EpochLog], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{EPOCH_CSV_HEADER}")?;
    for log in logs {
        log.write_csv_row(w)?;
    }
    Ok(())
}

pub fn write_timing_csv(logs: &[EpochLog], w: &mut impl Write) -> Result<()> {
    writeln!(w, "epoch,wall_clock_seconds")?;
    for log in logs {
        writeln!(w, "{},{:.6}", log.epoch, log.wall_clock_seconds)?;
    }
    Ok(())
}

/// Sample weights computed at one curriculum epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot {
    pub epoch: usize,
    pub weights: BTreeMap<usize, SampleWeightStats<f64>>,
}

pub fn write_weights_csv(snapshots: &[WeightSnapshot], w: &mut impl Write) -> Result<()> {
    writeln!(w, "epoch,sample_id,mu,var,mu_norm,var_norm,w_mu,w_sigma,w_out,w")?;
    for snap in snapshots {
        for (id, s) in &snap.weights {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                snap.epoch, id, s.mu, s.var, s.mu_norm, s.var_norm, s.w_mu, s.w_sigma, s.w_out, s.w
            )?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunResult<T> {
    pub config: TrainConfig,
    pub logs: Vec<EpochLog>,
    pub params: ConvNetParams<T>,
    /// Saved every K epochs, at the end of warm-up and at the last epoch.
    pub checkpoints: Vec<Checkpoint>,
    /// One table per curriculum epoch.
    pub difficulty_tables: Vec<DifficultyTable>,
    pub sample_weights: Vec<WeightSnapshot>,
}

impl<T> RunResult<T> {
    /// Per-sample gradient evaluations over the whole run.
    pub fn gradient_evaluations(&self) -> usize {
        self.logs.iter().map(|l| l.active).sum()
    }

    pub fn final_metrics(&self) -> Option<MetricReport> {
        self.logs.last().and_then(|l| l.test)
    }
}

struct Item<'s, T> {
    sample: &'s Sample<T>,
    image: &'s Grid2D<T>,
    weight: T,
}

struct StepOut<T> {
    loss: f64,
    mean_pixel_weight: f64,
    grad: ConvNetParams<T>,
}

fn sample_step<T: Real>(
    params: &ConvNetParams<T>,
    image: &Grid2D<T>,
    mask: &BitMask,
    weight: T,
    pixel: Option<(usize, &PixelWeightConfig)>,
) -> Result<StepOut<T>> {
    let pass = forward_pass(params, image)?;
    let logits = pass.logits();
    let pixel_weights = match pixel {
        Some((t, cfg)) => pixel_weight_matrix(&sigmoid_grid(logits), t, cfg)?,
        None => Grid2D::filled(logits.height(), logits.width(), T::one()),
    };
    let (loss, dlogits) = curriculum_loss(logits, mask, &pixel_weights, weight)?;
    let grad = backward_pass(params, &pass, &dlogits)?;
    Ok(StepOut { loss: loss.total.as_f64(), mean_pixel_weight: pixel_weights.mean().as_f64(), grad })
}

struct EpochStats {
    active: usize,
    mean_sample_weight: f64,
    mean_pixel_weight: f64,
    train_loss: f64,
    optimizer_steps: usize,
}

/// Training state carried across phases. Phases can be driven one at a time;
/// [`run_experiment`] chains them according to the configured mode.
pub struct Trainer<'a, T> {
    config: &'a TrainConfig,
    train: &'a [Sample<T>],
    test: &'a [Sample<T>],
    exec: &'a Executor,
    params: ConvNetParams<T>,
    adam: AdamState<T>,
    epoch: usize,
    buffers: BTreeMap<usize, DifficultyBuffer<f64>>,
    /// Parameters the curriculum currently scores with, and their epoch.
    scoring: (usize, ConvNetParams<T>),
    cached_table: Option<DifficultyTable>,
    frozen_table: Option<DifficultyTable>,
    logs: Vec<EpochLog>,
    checkpoints: Vec<Checkpoint>,
    tables: Vec<DifficultyTable>,
    weights: Vec<WeightSnapshot>,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(
        config: &'a TrainConfig,
        train: &'a [Sample<T>],
        test: &'a [Sample<T>],
        exec: &'a Executor,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let ids: BTreeSet<usize> = train.iter().map(|s| s.id).collect();
        if ids.len() != train.len() {
            return Err(Error::config("training sample ids are not unique"));
        }
        let params = ConvNetParams::init(config.seed);
        Ok(Self {
            config,
            train,
            test,
            exec,
            scoring: (0, params.clone()),
            params,
            adam: AdamState::new(),
            epoch: 0,
            buffers: ids.iter().map(|&id| (id, DifficultyBuffer::new(config.k))).collect(),
            cached_table: None,
            frozen_table: None,
            logs: Vec::new(),
            checkpoints: Vec::new(),
            tables: Vec::new(),
            weights: Vec::new(),
        })
    }

    /// Starts from the given parameters instead of the seeded initialization.
    pub fn with_params(mut self, params: ConvNetParams<T>) -> Self {
        self.scoring = (self.epoch, params.clone());
        self.params = params;
        self
    }

    /// Replaces checkpoint evaluation with a fixed table.
    pub fn with_frozen_difficulties(mut self, table: DifficultyTable) -> Self {
        self.frozen_table = Some(table);
        self
    }

    pub fn params(&self) -> &ConvNetParams<T> {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    /// Unit-weight training on every sample for `warmup_epochs` epochs. The
    /// final parameters become the first scoring checkpoint.
    pub fn run_warmup(&mut self) -> Result<()> {
        for _ in 0..self.config.warmup_epochs {
            self.plain_epoch(Phase::Warmup)?;
        }
        if self.config.warmup_epochs > 0 {
            self.save_checkpoint();
        }
        self.scoring = (self.epoch, self.params.clone());
        self.cached_table = None;
        Ok(())
    }

    /// Plain training on every sample; the baseline.
    pub fn run_plain(&mut self, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            self.plain_epoch(Phase::Plain)?;
        }
        Ok(())
    }

    /// Curriculum selection for `t_c − warmup_epochs` epochs, starting right
    /// after the current epoch.
    pub fn run_phase1(&mut self) -> Result<()> {
        let base = self.epoch;
        let len = self.config.curriculum_len();
        let schedule = self.config.schedule_variant();
        let pixel_cfg = self.config.pixel_config();
        let weight_params = self.config.weight_params();
        let comps = self.config.components;
        for t in 1..=len {
            let start = Instant::now();
            let epoch = base + t;
            let table = self.difficulty_table(epoch)?;
            for (id, &d) in &table.scores {
                if let Some(b) = self.buffers.get_mut(id) {
                    b.push(d);
                }
            }
            let p = if comps.wcs { selection_fraction(t, &schedule)? } else { 1.0 };
            let active: BTreeSet<usize> = if comps.wcs {
                active_subset(&table, p)?
            } else {
                self.train.iter().map(|s| s.id).collect()
            };
            let omega: BTreeMap<usize, f64> = if comps.tssw {
                // samples without history yet are left at unit weight
                let cohort: BTreeMap<usize, (f64, f64)> =
                    active.iter().filter_map(|id| temporal_stats(&self.buffers[id]).map(|s| (*id, s))).collect();
                let stats =
                    if cohort.is_empty() { BTreeMap::new() } else { sample_weights(&cohort, &weight_params)? };
                let omega = active.iter().map(|id| (*id, stats.get(id).map_or(1.0, |s| s.w))).collect();
                self.weights.push(WeightSnapshot { epoch, weights: stats });
                omega
            } else {
                active.iter().map(|&id| (id, 1.0)).collect()
            };
            let items: Vec<Item<'_, T>> = self
                .train
                .iter()
                .filter(|s| active.contains(&s.id))
                .map(|s| Item { sample: s, image: &s.image, weight: T::lit(omega[&s.id]) })
                .collect();
            let pixel = comps.pue.then_some((t, &pixel_cfg));
            let stats = Self::train_items(
                self.config,
                self.exec,
                &mut self.params,
                &mut self.adam,
                epoch,
                &items,
                pixel,
            )?;
            let checkpoint_epoch = Some(table.checkpoint_epoch);
            self.tables.push(table);
            self.finish_epoch(epoch, Phase::Curriculum, p, checkpoint_epoch, 0, stats, start)?;
        }
        Ok(())
    }

    /// Anti-curriculum fine-tuning for `t − t_c` epochs on low-pass filtered
    /// inputs with unit weights. Difficulty buffers are not updated.
    pub fn run_phase2(&mut self) -> Result<()> {
        let len = self.config.anti_len();
        let cfg = self.config;
        let mut cache: Option<BTreeMap<usize, Grid2D<T>>> = None;
        for i in 0..len {
            let start = Instant::now();
            let epoch = self.epoch + 1;
            let frac = if len > 1 { i as f64 / (len - 1) as f64 } else { 1.0 };
            let subset = self.filter_subset(epoch)?;
            let filtered = match (&cache, cfg.filter) {
                (Some(c), k) if k != FilterKind::Progressive => c.clone(),
                _ => {
                    let all = self.exec.map(self.train, |s| {
                        let mask = cfg.filter.mask(s.image.height(), s.image.width(), cfg.r, frac)?;
                        apply_spectral_mask(&s.image, &mask).map(|g| (s.id, g))
                    });
                    let all = all.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
                    cache = Some(all.clone());
                    all
                }
            };
            let items: Vec<Item<'_, T>> = self
                .train
                .iter()
                .map(|s| Item {
                    sample: s,
                    image: if subset.contains(&s.id) { &filtered[&s.id] } else { &s.image },
                    weight: T::one(),
                })
                .collect();
            let stats =
                Self::train_items(self.config, self.exec, &mut self.params, &mut self.adam, epoch, &items, None)?;
            self.finish_epoch(epoch, Phase::Anti, 1.0, None, subset.len(), stats, start)?;
        }
        Ok(())
    }

    pub fn finish(self) -> RunResult<T> {
        RunResult {
            config: self.config.clone(),
            logs: self.logs,
            params: self.params,
            checkpoints: self.checkpoints,
            difficulty_tables: self.tables,
            sample_weights: self.weights,
        }
    }

    fn plain_epoch(&mut self, phase: Phase) -> Result<()> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let items: Vec<Item<'_, T>> =
            self.train.iter().map(|s| Item { sample: s, image: &s.image, weight: T::one() }).collect();
        let stats = Self::train_items(self.config, self.exec, &mut self.params, &mut self.adam, epoch, &items, None)?;
        self.finish_epoch(epoch, phase, 1.0, None, 0, stats, start)
    }

    /// Ids to filter this anti epoch.
    fn filter_subset(&self, epoch: usize) -> Result<BTreeSet<usize>> {
        let all = || self.train.iter().map(|s| s.id).collect::<BTreeSet<_>>();
        if !self.config.components.sbft {
            return Ok(BTreeSet::new());
        }
        let half = self.train.len().div_ceil(2);
        match self.config.sbft_subset {
            SbftSubset::All => Ok(all()),
            SbftSubset::Hard => {
                let table = match self.tables.last().or(self.frozen_table.as_ref()) {
                    Some(t) => t.clone(),
                    // nothing scored yet (reversed order): score with the current model
                    None => evaluate_difficulties(&self.params, self.train, epoch, self.epoch, self.exec)?,
                };
                let mut ranked: Vec<(usize, f64)> = table.scores.into_iter().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                Ok(ranked.into_iter().take(half).map(|(id, _)| id).collect())
            }
            SbftSubset::Random => {
                let mut ids: Vec<usize> = all().into_iter().collect();
                SeededRng::new(self.config.seed, SUBSET_STREAM + epoch as u64).shuffle(&mut ids);
                Ok(ids.into_iter().take(half).collect())
            }
        }
    }

    /// Difficulty table for a curriculum epoch, scored by the most recent
    /// saved checkpoint and reused until that checkpoint changes.
    fn difficulty_table(&mut self, epoch: usize) -> Result<DifficultyTable> {
        if let Some(frozen) = &self.frozen_table {
            return Ok(frozen.relabel(epoch));
        }
        let (ckpt_epoch, ckpt) = &self.scoring;
        match &self.cached_table {
            Some(t) if t.checkpoint_epoch == *ckpt_epoch => Ok(t.relabel(epoch)),
            _ => {
                let t = evaluate_difficulties(ckpt, self.train, epoch, *ckpt_epoch, self.exec)?;
                self.cached_table = Some(t.clone());
                Ok(t)
            }
        }
    }

    fn train_items(
        config: &TrainConfig,
        exec: &Executor,
        params: &mut ConvNetParams<T>,
        adam: &mut AdamState<T>,
        epoch: usize,
        items: &[Item<'_, T>],
        pixel: Option<(usize, &PixelWeightConfig)>,
    ) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let batch = match config.batch_size {
            Some(b) => {
                SeededRng::new(config.seed, BATCH_STREAM + epoch as u64).shuffle(&mut order);
                b
            }
            None => items.len().max(1),
        };
        let lr = T::lit(config.lr);
        let (mut loss, mut pixel_w, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(batch) {
            let outs = exec.map(chunk, |&i| {
                let it = &items[i];
                sample_step(params, it.image, &it.sample.mask, it.weight, pixel)
            });
            let mut grad = ConvNetParams::zeros();
            for out in outs {
                let out = out?;
                loss += out.loss;
                pixel_w += out.mean_pixel_weight;
                grad.add_assign(&out.grad);
            }
            grad.scale(T::one() / T::from_usize_lossy(chunk.len()));
            adam_step(params, &grad, adam, lr);
            steps += 1;
        }
        let n = items.len().max(1) as f64;
        let omega: f64 = items.iter().map(|it| it.weight.as_f64()).sum();
        Ok(EpochStats {
            active: items.len(),
            mean_sample_weight: omega / n,
            mean_pixel_weight: pixel_w / n,
            train_loss: loss / n,
            optimizer_steps: steps,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_epoch(
        &mut self,
        epoch: usize,
        phase: Phase,
        selection_fraction: f64,
        checkpoint_epoch: Option<usize>,
        filtered: usize,
        stats: EpochStats,
        start: Instant,
    ) -> Result<()> {
        if !self.params.is_finite() {
            return Err(Error::domain(format!("parameters diverged at epoch {epoch}")));
        }
        self.epoch = epoch;
        let test = if self.test.is_empty() { None } else { Some(evaluate(&self.params, self.test, self.exec)?) };
        if epoch % self.config.k == 0 || epoch == self.config.t {
            self.save_checkpoint();
            self.scoring = (epoch, self.params.clone());
        }
        self.logs.push(EpochLog {
            epoch,
            phase,
            active: stats.active,
            selection_fraction,
            checkpoint_epoch,
            filtered,
            mean_sample_weight: stats.mean_sample_weight,
            mean_pixel_weight: stats.mean_pixel_weight,
            train_loss: stats.train_loss,
            optimizer_steps: stats.optimizer_steps,
            test,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn save_checkpoint(&mut self) {
        if self.checkpoints.last().is_some_and(|c| c.epoch == self.epoch) {
            return;
        }
        self.checkpoints.push(Checkpoint::new(&self.params, self.epoch, self.adam.step));
    }
}

/// Runs every epoch of the configured mode.
pub fn run_experiment<T: Real>(
    config: &TrainConfig,
    train: &[Sample<T>],
    test: &[Sample<T>],
    exec: &Executor,
) -> Result<RunResult<T>> {
    let mut trainer = Trainer::new(config, train, test, exec)?;
    match config.mode {
        Mode::Baseline => trainer.run_plain(config.t)?,
        Mode::Curriseg => {
            trainer.run_warmup()?;
            trainer.run_phase1()?;
            trainer.run_phase2()?;
        }
        Mode::Reversed => {
            trainer.run_phase2()?;
            trainer.run_warmup()?;
            trainer.run_phase1()?;
        }
    }
    Ok(trainer.finish())
}
