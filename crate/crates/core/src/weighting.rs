//! Sample weights from the temporal statistics of per-sample difficulty, and
//! entropy-based pixel weights.

use std::collections::{BTreeMap, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{minmax_normalize, Grid2D, Normalized};
use crate::scalar::Real;

/// Ring of the last `capacity` difficulty scores of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T: Real> DifficultyBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, d: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(d);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = T> + '_ {
        self.entries.iter().copied()
    }
}

/// Population mean and variance of the buffered scores; `None` when empty.
pub fn temporal_stats<T: Real>(buffer: &DifficultyBuffer<T>) -> Option<(T, T)> {
    if buffer.is_empty() {
        return None;
    }
    let first = buffer.entries.front().copied()?;
    // a constant history has exactly zero spread; summing and dividing would
    // leave a rounding residue that min-max scaling then blows up
    if buffer.entries().all(|d| d == first) {
        return Some((first, T::zero()));
    }
    let n = T::from_usize_lossy(buffer.count());
    let mu = buffer.entries().sum::<T>() / n;
    let var = buffer.entries().map(|d| (d - mu) * (d - mu)).sum::<T>() / n;
    Some((mu, var))
}

/// Shape of the variance-tolerance factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaVariant {
    /// `exp(−(σ̃² − σ*)² / (2γ²))`
    #[default]
    Gaussian,
    /// `max(0, 1 − |σ̃² − σ*| / γ)`
    Triangular,
    /// `1 − ((σ̃² − σ*) / γ)²`, floored at 0.
    Quadratic,
}

impl FromStr for SigmaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "triangular" => Ok(Self::Triangular),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::domain(format!("unknown sigma variant {other:?}"))),
        }
    }
}

/// Factors replaced by 1 in the component ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightAblation {
    pub drop_mu: bool,
    pub drop_sigma: bool,
    pub drop_out: bool,
}

impl WeightAblation {
    /// Parses a comma-separated list drawn from `mu`, `sigma`, `out`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut a = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "mu" => a.drop_mu = true,
                "sigma" => a.drop_sigma = true,
                "out" => a.drop_out = true,
                other => return Err(Error::domain(format!("unknown weight component {other:?}"))),
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWeightParams {
    pub sigma_star: f64,
    pub gamma: f64,
    pub w_min_s: f64,
    pub sigma_variant: SigmaVariant,
    pub ablation: WeightAblation,
}

impl Default for SampleWeightParams {
    fn default() -> Self {
        Self {
            sigma_star: 0.5,
            gamma: 0.2,
            w_min_s: 0.1,
            sigma_variant: SigmaVariant::Gaussian,
            ablation: WeightAblation::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWeightStats<T> {
    pub mu: T,
    pub var: T,
    pub mu_norm: T,
    pub var_norm: T,
    pub w_mu: T,
    pub w_sigma: T,
    pub w_out: T,
    /// Final weight, `W_min^s + (1 − W_min^s)·w_mu·w_sigma·w_out`.
    pub w: T,
}

/// Weight factors for one sample whose statistics are already normalized.
pub fn weights_from_normalized<T: Real>(
    mu: T,
    var: T,
    mu_norm: T,
    var_norm: T,
    params: &SampleWeightParams,
) -> SampleWeightStats<T> {
    let one = T::one();
    let sigma_star = T::lit(params.sigma_star);
    let gamma = T::lit(params.gamma);
    let dev = var_norm - sigma_star;

    let w_mu = if params.ablation.drop_mu { one } else { one - mu_norm };
    let w_sigma = if params.ablation.drop_sigma {
        one
    } else {
        match params.sigma_variant {
            SigmaVariant::Gaussian => (-(dev * dev) / (T::lit(2.0) * gamma * gamma)).exp(),
            SigmaVariant::Triangular => (one - dev.abs() / gamma).max(T::zero()),
            SigmaVariant::Quadratic => (one - (dev / gamma) * (dev / gamma)).max(T::zero()),
        }
    };
    let w_out = if params.ablation.drop_out { one } else { one - mu_norm * (one - var_norm) };
    let floor = T::lit(params.w_min_s);
    let w = floor + (one - floor) * w_mu * w_sigma * w_out;
    SampleWeightStats { mu, var, mu_norm, var_norm, w_mu, w_sigma, w_out, w }
}

/// Normalizes `(μ, σ²)` across the cohort and converts them into weights.
///
/// A statistic that is constant across the cohort carries no ranking
/// information and is replaced by its neutral value (`μ̃ = 0`, `σ̃² = σ*`).
pub fn sample_weights<T: Real>(
    cohort: &BTreeMap<usize, (T, T)>,
    params: &SampleWeightParams,
) -> Result<BTreeMap<usize, SampleWeightStats<T>>> {
    if cohort.is_empty() {
        return Err(Error::domain("sample weights of an empty cohort"));
    }
    validate_params(params)?;
    let mus: Vec<T> = cohort.values().map(|&(m, _)| m).collect();
    let vars: Vec<T> = cohort.values().map(|&(_, v)| v).collect();
    let mu_norm = match minmax_normalize(&mus)? {
        Normalized::Scaled(v) => v,
        Normalized::Degenerate => vec![T::zero(); mus.len()],
    };
    let var_norm = match minmax_normalize(&vars)? {
        Normalized::Scaled(v) => v,
        Normalized::Degenerate => vec![T::lit(params.sigma_star); vars.len()],
    };
    Ok(cohort
        .iter()
        .enumerate()
        .map(|(k, (&id, &(mu, var)))| {
            (id, weights_from_normalized(mu, var, mu_norm[k], var_norm[k], params))
        })
        .collect())
}

fn validate_params(p: &SampleWeightParams) -> Result<()> {
    if !(p.gamma > 0.0) {
        return Err(Error::domain("gamma must be positive"));
    }
    if !(0.0..1.0).contains(&p.w_min_s) {
        return Err(Error::domain("sample weight floor must lie in [0, 1)"));
    }
    Ok(())
}

// --- pixel level -------------------------------------------------------------

/// Binary entropy in bits, with `0·log₂0 = 0`.
pub fn pixel_entropy<T: Real>(p: T) -> T {
    let term = |q: T| if q <= T::zero() { T::zero() } else { -q * q.log2() };
    let p = p.max(T::zero()).min(T::one());
    term(p) + term(T::one() - p)
}

/// Decay of the entropy penalty over the curriculum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaVariant {
    /// `β(t) = 1 − t/T_c`
    #[default]
    Linear,
    /// `β(t) = exp(−t/T_c)`
    Exponential,
}

impl FromStr for BetaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::domain(format!("unknown beta variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelWeightConfig {
    pub w_min: f64,
    pub t_c: usize,
    pub beta_variant: BetaVariant,
}

impl PixelWeightConfig {
    pub fn beta(&self, t: usize) -> f64 {
        let x = t as f64 / self.t_c as f64;
        match self.beta_variant {
            BetaVariant::Linear => 1.0 - x,
            BetaVariant::Exponential => (-x).exp(),
        }
    }
}

/// `W = W_min + (1 − W_min)·(1 − β(t)·H(p))` per pixel.
pub fn pixel_weight_matrix<T: Real>(
    probabilities: &Grid2D<T>,
    t: usize,
    config: &PixelWeightConfig,
) -> Result<Grid2D<T>> {
    if config.t_c == 0 {
        return Err(Error::domain("curriculum length must be positive"));
    }
    if t > config.t_c {
        return Err(Error::domain(format!("epoch {t} beyond curriculum length {}", config.t_c)));
    }
    if !(config.w_min > 0.0 && config.w_min < 1.0) {
        return Err(Error::domain("pixel weight floor must lie in (0, 1)"));
    }
    let beta = T::lit(config.beta(t));
    let floor = T::lit(config.w_min);
    Ok(probabilities.map(|p| floor + (T::one() - floor) * (T::one() - beta * pixel_entropy(p))))
}
