//! Synthetic context-entangled scenes.
//!
//! Background and object share the same band-limited texture spectrum; the only
//! systematic cue is an intensity offset `(1 − α)·Δ` inside the object, so `α`
//! dials the camouflage from trivially visible (0) to invisible (1).

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{iou, BitMask, Grid2D, SeededRng};
use crate::scalar::Real;
use crate::spectral::{apply_spectral_mask, band_mask};

/// Stream offsets so that scene, corruption and degradation draws never share
/// a random stream.
const SCENE_STREAM: u64 = 1 << 32;
const CORRUPT_STREAM: u64 = 2 << 32;
const DEGRADE_STREAM: u64 = 3 << 32;

const MIN_COVERAGE: f64 = 0.05;
const MAX_COVERAGE: f64 = 0.50;
const MAX_ELLIPSE_TRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Side length of the square images.
    pub size: usize,
    /// Camouflage strength in `[0, 1]`; 1 is hardest.
    pub alpha: f64,
    /// `(low, high)` radius ratios of the texture band, relative to half the side.
    pub texture_band: (f64, f64),
    /// Object intensity offset at `alpha = 0`.
    pub intensity_gap: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { size: 48, alpha: 0.8, texture_band: (0.25, 1.45), intensity_gap: 0.4 }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::domain("scene size must be at least 8"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain("alpha outside [0, 1]"));
        }
        let (lo, hi) = self.texture_band;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::domain("texture band needs 0 <= low < high"));
        }
        if !(self.intensity_gap.is_finite() && self.intensity_gap >= 0.0) {
            return Err(Error::domain("intensity gap must be non-negative"));
        }
        let band = band_mask(self.size, self.size, lo, hi);
        if band.count_ones() < 2 {
            return Err(Error::domain("texture band contains no frequencies"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    #[default]
    None,
    /// Mask replaced by an unrelated region.
    OutlierLabel,
    /// Boundary dilated or eroded by a few pixels.
    AmbiguousBoundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: usize,
    pub image: Grid2D<T>,
    pub mask: BitMask,
    pub is_corrupted: bool,
    pub corruption_kind: CorruptionKind,
}

impl<T: Real> Sample<T> {
    pub fn with_image(&self, image: Grid2D<T>) -> Self {
        Self { image, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn random(rng: &mut SeededRng, size: usize) -> Self {
        let s = size as f64;
        Self {
            cy: rng.uniform_in(0.25, 0.75) * s,
            cx: rng.uniform_in(0.25, 0.75) * s,
            a: rng.uniform_in(0.12, 0.35) * s,
            b: rng.uniform_in(0.12, 0.35) * s,
            theta: rng.uniform_in(0.0, std::f64::consts::PI),
        }
    }

    fn rasterize(&self, size: usize) -> BitMask {
        let (sin, cos) = self.theta.sin_cos();
        BitMask::from_fn(size, size, |r, c| {
            let dy = r as f64 + 0.5 - self.cy;
            let dx = c as f64 + 0.5 - self.cx;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
        })
    }
}

fn coverage_ok(mask: &BitMask) -> bool {
    (MIN_COVERAGE..=MAX_COVERAGE).contains(&mask.coverage())
}

fn random_object(rng: &mut SeededRng, size: usize) -> Result<BitMask> {
    for _ in 0..MAX_ELLIPSE_TRIES {
        let m = Ellipse::random(rng, size).rasterize(size);
        if coverage_ok(&m) {
            return Ok(m);
        }
    }
    Err(Error::domain("could not draw an object covering 5-50% of the image"))
}

/// White noise restricted to the annulus `band`, min-max scaled to `[0, 1]`.
fn band_limited_noise(rng: &mut SeededRng, size: usize, band: &BitMask) -> Result<Grid2D<f64>> {
    let white = Grid2D::from_fn(size, size, |_, _| rng.standard_normal());
    let filtered = apply_spectral_mask(&white, band)?;
    let lo = filtered.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = filtered.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    Ok(filtered.map(|v| (v - lo) / range))
}

fn generate_one(id: usize, spec: &SceneSpec, band: &BitMask, seed: u64) -> Result<(Grid2D<f64>, BitMask)> {
    let mut rng = SeededRng::new(seed, SCENE_STREAM + id as u64);
    let size = spec.size;
    let background = band_limited_noise(&mut rng, size, band)?;
    let mask = random_object(&mut rng, size)?;
    let foreground = band_limited_noise(&mut rng, size, band)?;
    let offset = (1.0 - spec.alpha) * spec.intensity_gap;
    let image = Grid2D::from_fn(size, size, |r, c| {
        let v = if mask.get(r, c) { foreground.get(r, c) + offset } else { background.get(r, c) };
        v.clamp(0.0, 1.0)
    });
    Ok((image, mask))
}

/// `n` clean samples with ids `0..n`, fully determined by `(n, spec, seed)`.
pub fn generate_dataset<T: Real>(n: usize, spec: &SceneSpec, seed: u64) -> Result<Vec<Sample<T>>> {
    if n == 0 {
        return Err(Error::domain("dataset size must be positive"));
    }
    spec.validate()?;
    let band = band_mask(spec.size, spec.size, spec.texture_band.0, spec.texture_band.1);
    (0..n)
        .map(|id| {
            let (image, mask) = generate_one(id, spec, &band, seed)?;
            Ok(Sample {
                id,
                image: image.cast(),
                mask,
                is_corrupted: false,
                corruption_kind: CorruptionKind::None,
            })
        })
        .collect()
}

/// Pixels set in both masks.
fn overlap(a: &BitMask, b: &BitMask) -> usize {
    a.bits().iter().zip(b.bits()).filter(|(&x, &y)| x & y == 1).count()
}

fn outlier_mask(rng: &mut SeededRng, truth: &BitMask) -> Result<BitMask> {
    let size = truth.height();
    let mut best: Option<(usize, BitMask)> = None;
    for _ in 0..MAX_ELLIPSE_TRIES {
        let m = Ellipse::random(rng, size).rasterize(size);
        if !coverage_ok(&m) {
            continue;
        }
        let o = overlap(&m, truth);
        if best.as_ref().is_none_or(|(bo, _)| o < *bo) {
            best = Some((o, m));
        }
        if o == 0 {
            break;
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| Error::domain("could not draw an outlier label"))
}

fn ambiguous_mask(rng: &mut SeededRng, truth: &BitMask) -> BitMask {
    let k = 1 + rng.below(3);
    let dilate_first = rng.uniform() < 0.5;
    for radius in (1..=k).rev() {
        let (first, second) = if dilate_first {
            (truth.dilate(radius), truth.erode(radius))
        } else {
            (truth.erode(radius), truth.dilate(radius))
        };
        if coverage_ok(&first) {
            return first;
        }
        if coverage_ok(&second) {
            return second;
        }
    }
    truth.clone()
}

/// Corrupts exactly `round(f·n)` labels of each kind, chosen by a seeded
/// shuffle. Images are untouched.
pub fn corrupt_labels<T: Real>(
    samples: &[Sample<T>],
    outlier_fraction: f64,
    ambiguous_fraction: f64,
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    let valid = |f: f64| (0.0..=1.0).contains(&f);
    if !valid(outlier_fraction) || !valid(ambiguous_fraction) || outlier_fraction + ambiguous_fraction > 1.0 + 1e-12 {
        return Err(Error::domain("corruption fractions must be in [0, 1] and sum to at most 1"));
    }
    let n = samples.len();
    let n_out = (outlier_fraction * n as f64).round() as usize;
    let n_amb = ((ambiguous_fraction * n as f64).round() as usize).min(n - n_out);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pick = SeededRng::new(seed, CORRUPT_STREAM);
    pick.shuffle(&mut order);

    let mut out = samples.to_vec();
    for (rank, &idx) in order.iter().enumerate().take(n_out + n_amb) {
        let s = &mut out[idx];
        let mut rng = SeededRng::new(seed, CORRUPT_STREAM + 1 + s.id as u64);
        if rank < n_out {
            s.mask = outlier_mask(&mut rng, &s.mask)?;
            s.corruption_kind = CorruptionKind::OutlierLabel;
        } else {
            s.mask = ambiguous_mask(&mut rng, &s.mask);
            s.corruption_kind = CorruptionKind::AmbiguousBoundary;
        }
        s.is_corrupted = true;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Blur,
    LowLight,
    Haze,
    Noise,
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(Self::Blur),
            "low_light" | "low-light" => Ok(Self::LowLight),
            "haze" => Ok(Self::Haze),
            "noise" => Ok(Self::Noise),
            other => Err(Error::domain(format!("unknown degradation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub strength: f64,
    /// Fraction of a dataset that [`degrade_dataset`] touches.
    pub ratio: f64,
}

/// Box blur of width `2·round(strength) + 1`; near the border the kernel is
/// renormalized over in-bounds pixels.
fn box_blur<T: Real>(image: &Grid2D<T>, half: usize) -> Grid2D<T> {
    if half == 0 {
        return image.clone();
    }
    let (h, w) = image.dims();
    let k = half as isize;
    let pass = |src: &Grid2D<T>, horizontal: bool| {
        Grid2D::from_fn(h, w, |r, c| {
            let (mut acc, mut n) = (T::zero(), 0usize);
            for d in -k..=k {
                let (rr, cc) = if horizontal { (r as isize, c as isize + d) } else { (r as isize + d, c as isize) };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += src.get(rr as usize, cc as usize);
                    n += 1;
                }
            }
            acc / T::from_usize_lossy(n)
        })
    };
    pass(&pass(image, true), false)
}

pub fn degrade<T: Real>(image: &Grid2D<T>, spec: &DegradationSpec, rng: &mut SeededRng) -> Result<Grid2D<T>> {
    let s = spec.strength;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::domain("degradation strength must be non-negative"));
    }
    Ok(match spec.kind {
        DegradationKind::Blur => box_blur(image, s.round() as usize),
        DegradationKind::LowLight => {
            let k = T::lit(1.0 / (1.0 + s));
            image.map(|v| v * k)
        }
        DegradationKind::Haze => {
            let f = T::lit(s / (1.0 + s));
            let air = T::lit(0.8);
            image.map(|v| v * (T::one() - f) + air * f)
        }
        DegradationKind::Noise => {
            if s == 0.0 {
                return Ok(image.clone());
            }
            let noisy: Vec<T> = image
                .as_slice()
                .iter()
                .map(|&v| (v + T::lit(rng.uniform_in(-s, s))).max(T::zero()).min(T::one()))
                .collect();
            Grid2D::new(image.height(), image.width(), noisy)?
        }
    })
}

/// Degrades `round(ratio·n)` samples picked by a seeded shuffle; each picked
/// sample draws from its own stream.
pub fn degrade_dataset<T: Real>(samples: &[Sample<T>], spec: &DegradationSpec, seed: u64) -> Result<Vec<Sample<T>>> {
    if !(0.0..=1.0).contains(&spec.ratio) {
        return Err(Error::domain("degradation ratio outside [0, 1]"));
    }
    let count = (spec.ratio * samples.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    SeededRng::new(seed, DEGRADE_STREAM).shuffle(&mut order);
    let mut out = samples.to_vec();
    for &idx in order.iter().take(count) {
        let mut rng = SeededRng::new(seed, DEGRADE_STREAM + 1 + out[idx].id as u64);
        out[idx].image = degrade(&out[idx].image, spec, &mut rng)?;
    }
    Ok(out)
}

/// Mean foreground and background intensity over a set of samples.
pub fn intensity_gap<T: Real>(samples: &[Sample<T>]) -> (f64, f64) {
    let (mut fg, mut bg) = (0.0, 0.0);
    for s in samples {
        let (mut f, mut nf, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in s.image.as_slice().iter().zip(s.mask.bits()) {
            if m == 1 {
                f += v.as_f64();
                nf += 1;
            } else {
                b += v.as_f64();
                nb += 1;
            }
        }
        fg += f / nf.max(1) as f64;
        bg += b / nb.max(1) as f64;
    }
    let n = samples.len().max(1) as f64;
    (fg / n, bg / n)
}

/// IoU of each sample's mask against a reference set with the same ids.
pub fn label_agreement<T: Real>(a: &[Sample<T>], b: &[Sample<T>]) -> Result<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| iou(&x.mask, &y.mask)).collect()
}

// --- dataset directory -------------------------------------------------------

pub const DATASET_FORMAT: &str = "curriseg-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub is_corrupted: bool,
    pub corruption_kind: CorruptionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub spec: SceneSpec,
    pub seed: u64,
    pub n: usize,
    pub outlier_fraction: f64,
    pub ambiguous_fraction: f64,
    pub corrupted: usize,
    pub outlier_labels: usize,
    pub ambiguous_labels: usize,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn describe<T: Real>(
        samples: &[Sample<T>],
        spec: SceneSpec,
        seed: u64,
        outlier_fraction: f64,
        ambiguous_fraction: f64,
    ) -> Self {
        let count = |k: CorruptionKind| samples.iter().filter(|s| s.corruption_kind == k).count();
        Self {
            format: DATASET_FORMAT.into(),
            version: 1,
            spec,
            seed,
            n: samples.len(),
            outlier_fraction,
            ambiguous_fraction,
            corrupted: samples.iter().filter(|s| s.is_corrupted).count(),
            outlier_labels: count(CorruptionKind::OutlierLabel),
            ambiguous_labels: count(CorruptionKind::AmbiguousBoundary),
            samples: samples
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id,
                    image: format!("images/{:05}.pgm", s.id),
                    mask: format!("masks/{:05}.pgm", s.id),
                    is_corrupted: s.is_corrupted,
                    corruption_kind: s.corruption_kind,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes `manifest.json`, `images/*.pgm` and `masks/*.pgm` under `dir`.
pub fn save_dataset<T: Real>(dir: &Path, samples: &[Sample<T>], manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    for (s, e) in samples.iter().zip(&manifest.samples) {
        s.image.save_pgm(dir.join(&e.image))?;
        s.mask.save_pgm(dir.join(&e.mask))?;
    }
    fs::write(dir.join("manifest.json"), manifest.to_json()?)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format(format!("{} is not a dataset manifest", dir.display())));
    }
    Ok(m)
}

pub fn load_dataset<T: Real>(dir: &Path) -> Result<(DatasetManifest, Vec<Sample<T>>)> {
    let manifest = load_manifest(dir)?;
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            let image = Grid2D::load_pgm(dir.join(&e.image))?;
            let mask = BitMask::load_pgm(dir.join(&e.mask))?;
            image.check_mask_dims(&mask)?;
            Ok(Sample { id: e.id, image, mask, is_corrupted: e.is_corrupted, corruption_kind: e.corruption_kind })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
