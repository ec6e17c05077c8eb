//! Evaluation measures: MAE, IoU, Dice and F_β on probability maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, BitMask, Grid2D};
use crate::loss::sigmoid;
use crate::model::{forward, ConvNetParams};
use crate::scalar::Real;
use crate::synthdata::Sample;
use crate::exec::Executor;

/// β² used by F_β, following the salient/camouflaged detection convention.
pub const BETA_SQ: f64 = 0.3;

pub fn mae<T: Real>(prediction_probs: &Grid2D<T>, target: &BitMask) -> Result<f64> {
    prediction_probs.check_mask_dims(target)?;
    let total: f64 = prediction_probs
        .as_slice()
        .iter()
        .zip(target.bits())
        .map(|(&p, &y)| (p.as_f64() - f64::from(y)).abs())
        .sum();
    Ok(total / target.len() as f64)
}

fn binarize<T: Real>(prediction_probs: &Grid2D<T>, target: &BitMask) -> Result<BitMask> {
    prediction_probs.check_mask_dims(target)?;
    Ok(prediction_probs.binarize(T::lit(0.5)))
}

/// IoU after binarizing at 0.5.
pub fn iou<T: Real>(prediction_probs: &Grid2D<T>, target: &BitMask) -> Result<f64> {
    grid::iou(&binarize(prediction_probs, target)?, target)
}

/// `2|A∩B| / (|A| + |B|)` after binarizing at 0.5; 1 when both are empty.
pub fn dice<T: Real>(prediction_probs: &Grid2D<T>, target: &BitMask) -> Result<f64> {
    let pred = binarize(prediction_probs, target)?;
    let inter = pred.bits().iter().zip(target.bits()).filter(|(&a, &b)| a & b == 1).count();
    let total = pred.count_ones() + target.count_ones();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// `(1 + β²)·P·R / (β²·P + R)` after binarizing at 0.5; 0 when undefined.
pub fn f_beta<T: Real>(prediction_probs: &Grid2D<T>, target: &BitMask, beta_sq: f64) -> Result<f64> {
    if !(beta_sq > 0.0) {
        return Err(Error::domain("beta squared must be positive"));
    }
    let pred = binarize(prediction_probs, target)?;
    let tp = pred.bits().iter().zip(target.bits()).filter(|(&a, &b)| a & b == 1).count() as f64;
    let predicted = pred.count_ones() as f64;
    let actual = target.count_ones() as f64;
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    Ok(f_from_pr(precision, recall, beta_sq))
}

pub fn f_from_pr(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + beta_sq) * precision * recall / den
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub iou: f64,
    pub dice: f64,
    pub f_beta: f64,
    pub n_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub mae: f64,
    pub iou: f64,
    pub dice: f64,
    pub f_beta: f64,
}

pub fn sample_metrics<T: Real>(probs: &Grid2D<T>, target: &BitMask) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        mae: mae(probs, target)?,
        iou: iou(probs, target)?,
        dice: dice(probs, target)?,
        f_beta: f_beta(probs, target, BETA_SQ)?,
    })
}

impl MetricReport {
    /// Dataset means of per-sample values.
    pub fn from_samples(samples: &[SampleMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("metric report over zero samples"));
        }
        let n = samples.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mae: mean(|s| s.mae),
            iou: mean(|s| s.iou),
            dice: mean(|s| s.dice),
            f_beta: mean(|s| s.f_beta),
            n_samples: samples.len(),
        })
    }
}

/// Runs the network over `dataset` and reports mean metrics.
pub fn evaluate<T: Real>(params: &ConvNetParams<T>, dataset: &[Sample<T>], exec: &Executor) -> Result<MetricReport> {
    let per = exec.map(dataset, |s| {
        let logits = forward(params, &s.image)?;
        sample_metrics(&logits.map(sigmoid), &s.mask)
    });
    MetricReport::from_samples(&per.into_iter().collect::<Result<Vec<_>>>()?)
}
