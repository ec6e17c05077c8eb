//! Checkpoint-evaluated difficulty and the warm-up admission schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{iou, percentile_threshold, BitMask, Grid2D};
use crate::loss::sigmoid;
use crate::model::{forward, ConvNetParams};
use crate::scalar::Real;
use crate::synthdata::Sample;

/// `1 − IoU(binarize(sigmoid(logits), 0.5), ground_truth)`. A probability of
/// exactly 0.5 counts as foreground.
pub fn difficulty_score<T: Real>(prediction_logits: &Grid2D<T>, ground_truth: &BitMask) -> Result<f64> {
    prediction_logits.check_mask_dims(ground_truth)?;
    let predicted = prediction_logits.map(sigmoid).binarize(T::lit(0.5));
    Ok(1.0 - iou(&predicted, ground_truth)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    /// Fraction squared; admits hard samples late.
    Quadratic,
    /// Square root of the fraction; admits hard samples early.
    Sqrt,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            "sqrt" => Ok(Self::Sqrt),
            other => Err(Error::domain(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleVariant {
    pub kind: ScheduleKind,
    pub p_min: f64,
    /// Length of the curriculum clock; `p(t_c) = 1`.
    pub t_c: usize,
}

/// `p(t) = p_min + (1 − p_min)·((t − 1)/(T_c − 1))^e`, `e ∈ {1, 2, ½}`.
pub fn selection_fraction(t: usize, schedule: &ScheduleVariant) -> Result<f64> {
    if !(schedule.p_min > 0.0 && schedule.p_min <= 1.0) {
        return Err(Error::domain(format!("p_min {} outside (0, 1]", schedule.p_min)));
    }
    if t < 1 || t > schedule.t_c {
        return Err(Error::domain(format!("curriculum epoch {t} outside 1..={}", schedule.t_c)));
    }
    if schedule.t_c == 1 {
        return Ok(1.0);
    }
    let frac = (t - 1) as f64 / (schedule.t_c - 1) as f64;
    let shaped = match schedule.kind {
        ScheduleKind::Linear => frac,
        ScheduleKind::Quadratic => frac * frac,
        ScheduleKind::Sqrt => frac.sqrt(),
    };
    Ok(schedule.p_min + (1.0 - schedule.p_min) * shaped)
}

/// Difficulty of every training sample under one frozen checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub epoch: usize,
    pub checkpoint_epoch: usize,
    pub scores: BTreeMap<usize, f64>,
}

impl DifficultyTable {
    pub fn new(epoch: usize, checkpoint_epoch: usize, scores: BTreeMap<usize, f64>) -> Result<Self> {
        if scores.values().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::domain("difficulty outside [0, 1]"));
        }
        Ok(Self { epoch, checkpoint_epoch, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.scores.values().sum::<f64>() / self.scores.len().max(1) as f64
    }

    pub fn write_csv_header(w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch,sample_id,d")?;
        Ok(())
    }

    /// Appends `epoch,sample_id,d` rows in id order.
    pub fn write_csv_rows(&self, w: &mut impl Write) -> Result<()> {
        for (id, d) in &self.scores {
            writeln!(w, "{},{},{}", self.epoch, id, d)?;
        }
        Ok(())
    }

    /// Same table re-labelled for another epoch (the checkpoint did not change).
    pub fn relabel(&self, epoch: usize) -> Self {
        Self { epoch, ..self.clone() }
    }
}

/// Ids whose difficulty does not exceed the nearest-rank `p`-percentile. Ties
/// at the threshold are all admitted.
pub fn active_subset(table: &DifficultyTable, p: f64) -> Result<BTreeSet<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("selection fraction {p} outside (0, 1]")));
    }
    if table.is_empty() {
        return Ok(BTreeSet::new());
    }
    let scores: Vec<f64> = table.scores.values().copied().collect();
    let threshold = percentile_threshold(&scores, p)?;
    Ok(table.scores.iter().filter(|(_, &d)| d <= threshold).map(|(&id, _)| id).collect())
}

/// Scores every sample with a frozen checkpoint. The checkpoint is only read.
pub fn evaluate_difficulties<T: Real>(
    checkpoint: &ConvNetParams<T>,
    dataset: &[Sample<T>],
    epoch: usize,
    checkpoint_epoch: usize,
    exec: &Executor,
) -> Result<DifficultyTable> {
    if !checkpoint.is_finite() {
        return Err(Error::domain("non-finite checkpoint"));
    }
    let scores = exec.map(dataset, |s| {
        let logits = forward(checkpoint, &s.image)?;
        difficulty_score(&logits, &s.mask).map(|d| (s.id, d))
    });
    let scores = scores.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
    DifficultyTable::new(epoch, checkpoint_epoch, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: ScheduleKind) -> ScheduleVariant {
        ScheduleVariant { kind, p_min: 0.6, t_c: 60 }
    }

    #[test]
    fn difficulty_examples() {
        let gt = BitMask::from_fn(4, 4, |_, c| c < 2);
        let perfect = Grid2D::from_fn(4, 4, |_, c| if c < 2 { 5.0 } else { -5.0 });
        assert_eq!(difficulty_score(&perfect, &gt).unwrap(), 0.0);
        let disjoint = perfect.map(|v| -v);
        assert_eq!(difficulty_score(&disjoint, &gt).unwrap(), 1.0);
        let top = Grid2D::from_fn(4, 4, |r, _| if r < 2 { 5.0 } else { -5.0 });
        assert!((difficulty_score(&top, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // logit 0 ⇒ p = 0.5 ⇒ foreground
        let zero = Grid2D::<f64>::zeros(4, 4);
        assert!((difficulty_score(&zero, &gt).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fraction_examples() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Quadratic, ScheduleKind::Sqrt] {
            assert!((selection_fraction(1, &sched(kind)).unwrap() - 0.6).abs() < 1e-15);
            assert_eq!(selection_fraction(60, &sched(kind)).unwrap(), 1.0);
        }
        let p30 = selection_fraction(30, &sched(ScheduleKind::Linear)).unwrap();
        assert!((p30 - (0.6 + 0.4 * 29.0 / 59.0)).abs() < 1e-15);
        assert!((p30 - 0.7966).abs() < 1e-4);
        assert!(selection_fraction(0, &sched(ScheduleKind::Linear)).is_err());
        assert!(selection_fraction(61, &sched(ScheduleKind::Linear)).is_err());
    }

    #[test]
    fn subset_examples() {
        let table = DifficultyTable::new(
            1,
            0,
            [(10, 0.1), (11, 0.2), (12, 0.3), (13, 0.4), (14, 0.5)].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(active_subset(&table, 1.0).unwrap().len(), 5);
        assert_eq!(active_subset(&table, 0.6).unwrap(), [10, 11, 12].into_iter().collect());
        let ties = DifficultyTable::new(1, 0, (0..7).map(|i| (i, 0.4)).collect()).unwrap();
        assert_eq!(active_subset(&ties, 0.1).unwrap().len(), 7);
        assert!(DifficultyTable::new(1, 0, [(0, 1.5)].into_iter().collect()).is_err());
    }

    #[test]
    fn csv_rows() {
        let table = DifficultyTable::new(12, 10, [(0, 0.25), (3, 1.0)].into_iter().collect()).unwrap();
        let mut buf = Vec::new();
        DifficultyTable::write_csv_header(&mut buf).unwrap();
        table.write_csv_rows(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,sample_id,d\n12,0,0.25\n12,3,1\n");
    }
}
