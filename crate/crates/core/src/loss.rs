//! Pixel-weighted BCE and soft-IoU on logits, and the two training objectives
//! built from them.
//!
//! Every function returns the loss value together with its exact gradient with
//! respect to the logits. Pixel weights are treated as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask, Grid2D};
use crate::scalar::Real;

/// Probability clamp used inside the BCE logarithms.
pub const PROB_CLAMP: f64 = 1e-7;
/// Additive smoothing in the soft-IoU ratio.
pub const IOU_SMOOTH: f64 = 1.0;

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_grid<T: Real>(logits: &Grid2D<T>) -> Grid2D<T> {
    logits.map(sigmoid)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub bce: T,
    pub iou: T,
    /// `sample_weight_applied · (bce + iou)`.
    pub total: T,
    pub sample_weight_applied: T,
}

fn check_shapes<T: Real>(logits: &Grid2D<T>, target: &BitMask, weights: &Grid2D<T>) -> Result<()> {
    logits.check_mask_dims(target)?;
    logits.check_same_dims(weights)
}

/// `Σ W·BCE / Σ W` with `p = sigmoid(logit)` clamped to `[1e-7, 1 − 1e-7]`.
pub fn weighted_bce<T: Real>(
    logits: &Grid2D<T>,
    target: &BitMask,
    pixel_weights: &Grid2D<T>,
) -> Result<(T, Grid2D<T>)> {
    check_shapes(logits, target, pixel_weights)?;
    let w = pixel_weights.as_slice();
    if w.iter().any(|&x| x < T::zero()) {
        return Err(Error::domain("negative pixel weight"));
    }
    let w_sum: T = w.iter().copied().sum();
    if w_sum <= T::zero() {
        return Err(Error::domain("pixel weights sum to zero"));
    }
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut acc = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((&z, &y), &wi) in logits.as_slice().iter().zip(target.bits()).zip(w) {
        let p = sigmoid(z);
        let pc = p.max(lo).min(hi);
        let (term, slope) = if y == 1 {
            (-pc.ln(), p - T::one())
        } else {
            (-(T::one() - pc).ln(), p)
        };
        acc += wi * term;
        // the clamp is flat outside (lo, hi)
        let g = if p > lo && p < hi { slope } else { T::zero() };
        grad.push(wi * g / w_sum);
    }
    Ok((acc / w_sum, Grid2D::new(logits.height(), logits.width(), grad)?))
}

/// `1 − (Σ W·p·y + 1) / (Σ W·(p + y − p·y) + 1)` on unclamped soft probabilities.
pub fn weighted_iou<T: Real>(
    logits: &Grid2D<T>,
    target: &BitMask,
    pixel_weights: &Grid2D<T>,
) -> Result<(T, Grid2D<T>)> {
    check_shapes(logits, target, pixel_weights)?;
    let s = T::lit(IOU_SMOOTH);
    let probs: Vec<T> = logits.as_slice().iter().map(|&z| sigmoid(z)).collect();
    let (mut inter, mut union) = (T::zero(), T::zero());
    for ((&p, &y), &w) in probs.iter().zip(target.bits()).zip(pixel_weights.as_slice()) {
        let y = if y == 1 { T::one() } else { T::zero() };
        inter += w * p * y;
        union += w * (p + y - p * y);
    }
    let num = inter + s;
    let den = union + s;
    let value = T::one() - num / den;
    let den2 = den * den;
    let grad = probs
        .iter()
        .zip(target.bits())
        .zip(pixel_weights.as_slice())
        .map(|((&p, &y), &w)| {
            let y = if y == 1 { T::one() } else { T::zero() };
            let d_inter = w * y;
            let d_union = w * (T::one() - y);
            let d_value_dp = -(d_inter * den - num * d_union) / den2;
            d_value_dp * p * (T::one() - p)
        })
        .collect();
    Ok((value, Grid2D::new(logits.height(), logits.width(), grad)?))
}

/// `ω · (BCE_W + IoU_W)` and its gradient.
pub fn curriculum_loss<T: Real>(
    logits: &Grid2D<T>,
    target: &BitMask,
    pixel_weights: &Grid2D<T>,
    sample_weight: T,
) -> Result<(LossBreakdown<T>, Grid2D<T>)> {
    if !(sample_weight >= T::zero() && sample_weight <= T::one()) {
        return Err(Error::domain(format!("sample weight {sample_weight} outside [0, 1]")));
    }
    let (bce, g_bce) = weighted_bce(logits, target, pixel_weights)?;
    let (iou, g_iou) = weighted_iou(logits, target, pixel_weights)?;
    let grad: Vec<T> = g_bce
        .as_slice()
        .iter()
        .zip(g_iou.as_slice())
        .map(|(&a, &b)| sample_weight * (a + b))
        .collect();
    let breakdown = LossBreakdown {
        bce,
        iou,
        total: sample_weight * (bce + iou),
        sample_weight_applied: sample_weight,
    };
    Ok((breakdown, Grid2D::new(logits.height(), logits.width(), grad)?))
}

/// Anti-curriculum objective on filtered inputs: uniform pixel weights, `ω = 1`.
pub fn anti_loss<T: Real>(logits: &Grid2D<T>, target: &BitMask) -> Result<(LossBreakdown<T>, Grid2D<T>)> {
    let uniform = Grid2D::filled(logits.height(), logits.width(), T::one());
    curriculum_loss(logits, target, &uniform, T::one())
}
