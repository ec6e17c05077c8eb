//! Dense rasters, binary masks, seeded random streams and the order statistics
//! the curriculum relies on.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major `height × width` raster of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> Grid2D<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("grid dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::domain(format!(
                "grid of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid values must be finite"));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    /// Builds a grid without the finiteness scan. Callers guarantee the invariant.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.width + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.len())
    }

    pub fn sum_sq(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims(), other.dims());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Thresholds at `threshold` with a `>=` rule.
    pub fn binarize(&self, threshold: T) -> BitMask {
        BitMask::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|&v| u8::from(v >= threshold)).collect(),
        )
    }

    pub fn cast<U: Real>(&self) -> Grid2D<U> {
        Grid2D::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }

    pub fn check_same_dims<U>(&self, other: &Grid2D<U>) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape { expected: self.dims(), got: (other.height, other.width) });
        }
        Ok(())
    }

    pub fn check_mask_dims(&self, mask: &BitMask) -> Result<()> {
        if self.dims() != mask.dims() {
            return Err(Error::Shape { expected: self.dims(), got: mask.dims() });
        }
        Ok(())
    }

    /// Round-trips through 8-bit quantization, as a PGM export/import would.
    pub fn quantize_u8(&self) -> Self {
        let q = T::lit(255.0);
        self.map(|v| (v.max(T::zero()).min(T::one()) * q).round() / q)
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BitMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("mask dimensions must be positive"));
        }
        if bits.len() != height * width {
            return Err(Error::domain(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::domain("mask bits must be 0 or 1"));
        }
        Ok(Self { height, width, bits })
    }

    pub(crate) fn from_raw(height: usize, width: usize, bits: Vec<u8>) -> Self {
        Self { height, width, bits }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_raw(height, width, vec![0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(u8::from(f(r, c)));
            }
        }
        Self::from_raw(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c] == 1
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.bits[r * self.width + c] = u8::from(on);
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Fraction of set cells.
    pub fn coverage(&self) -> f64 {
        self.count_ones() as f64 / self.len() as f64
    }

    pub fn to_grid<T: Real>(&self) -> Grid2D<T> {
        Grid2D::from_raw(
            self.height,
            self.width,
            self.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect(),
        )
    }

    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    /// Morphological dilation with a `(2k+1)²` square element.
    pub fn dilate(&self, k: usize) -> BitMask {
        self.morph(k, true)
    }

    /// Morphological erosion with a `(2k+1)²` square element; outside the
    /// raster counts as background.
    pub fn erode(&self, k: usize) -> BitMask {
        self.morph(k, false)
    }

    fn morph(&self, k: usize, dilate: bool) -> BitMask {
        let (h, w) = self.dims();
        BitMask::from_fn(h, w, |r, c| {
            let r0 = r as isize - k as isize;
            let c0 = c as isize - k as isize;
            let mut any = false;
            let mut all = true;
            for rr in r0..=(r + k) as isize {
                for cc in c0..=(c + k) as isize {
                    let on = rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && self.get(rr as usize, cc as usize);
                    any |= on;
                    all &= on;
                }
            }
            if dilate {
                any
            } else {
                all
            }
        })
    }
}

/// Deterministic random stream keyed by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's native stream
/// selector, so distinct ids never overlap.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::gen::<f64>(self)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand::Rng::sample(self, rand_distr::StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::gen_range(self, 0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        rand::seq::SliceRandom::shuffle(items, self);
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Nearest-rank percentile: the element at index `ceil(p·N) − 1` of the
/// ascending sort. `p = 1` yields the maximum.
pub fn percentile_threshold<T: Real>(scores: &[T], p: T) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::domain("percentile of an empty score set"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    if !(p > T::zero() && p <= T::one()) {
        return Err(Error::domain(format!("percentile {p} outside (0, 1]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    Ok(sorted[nearest_rank(p.as_f64(), n) - 1])
}

/// `ceil(p·n)` clamped to `[1, n]`. Products within 1e-9 of an integer snap to
/// it so that e.g. `0.6·5` is rank 3, not 4.
pub(crate) fn nearest_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (rank as usize).clamp(1, n)
}

/// Result of min-max scaling a cohort.
#[derive(Clone, Debug, PartialEq)]
pub enum Normalized<T> {
    Scaled(Vec<T>),
    /// Every value was equal; there is no range to scale by.
    Degenerate,
}

impl<T> Normalized<T> {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Normalized::Degenerate)
    }
}

pub fn minmax_normalize<T: Real>(values: &[T]) -> Result<Normalized<T>> {
    if values.is_empty() {
        return Err(Error::domain("min-max normalization of an empty set"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite value"));
    }
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    // a spread at rounding level is not a ranking
    if range <= T::epsilon() * T::lit(8.0) * hi.abs().max(lo.abs()) || range == T::zero() {
        return Ok(Normalized::Degenerate);
    }
    Ok(Normalized::Scaled(
        values.iter().map(|&v| ((v - lo) / range).max(T::zero()).min(T::one())).collect(),
    ))
}

/// Intersection over union of two masks. Two empty masks score 1.
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape { expected: a.dims(), got: b.dims() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x & y);
        union += usize::from(x | y);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

// --- PGM -------------------------------------------------------------------

fn write_pgm_bytes(w: &mut impl Write, height: usize, width: usize, data: &[u8]) -> Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    Ok(())
}

struct RawPgm {
    height: usize,
    width: usize,
    maxval: u32,
    data: Vec<u32>,
}

fn read_pgm_raw(r: impl Read) -> Result<RawPgm> {
    let mut reader = BufReader::new(r);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let next_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos)?;
    let parse = |s: String| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let width = parse(next_token(&mut pos)?)?;
    let height = parse(next_token(&mut pos)?)?;
    let maxval = parse(next_token(&mut pos)?)? as u32;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Format("unsupported PGM dimensions or maxval".into()));
    }
    let n = width * height;
    let data = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            if bytes.len() < pos + n {
                return Err(Error::Format("truncated PGM raster".into()));
            }
            bytes[pos..pos + n].iter().map(|&b| b as u32).collect()
        }
        "P2" => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(parse(next_token(&mut pos)?)? as u32);
            }
            out
        }
        other => return Err(Error::Format(format!("not a PGM file (magic {other:?})"))),
    };
    if data.iter().any(|&v| v > maxval) {
        return Err(Error::Format("PGM sample exceeds maxval".into()));
    }
    Ok(RawPgm { height, width, maxval, data })
}

impl<T: Real> Grid2D<T> {
    /// Writes binary PGM; values are clipped to `[0, 1]` and scaled to 0–255.
    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        let data: Vec<u8> = self
            .values
            .iter()
            .map(|&v| (v.max(T::zero()).min(T::one()) * T::lit(255.0)).round().as_f64() as u8)
            .collect();
        write_pgm_bytes(w, self.height, self.width, &data)
    }

    /// Reads P2 or P5 PGM into `[0, 1]`.
    pub fn read_pgm(r: impl Read) -> Result<Self> {
        let raw = read_pgm_raw(r)?;
        let scale = T::from_u32(raw.maxval).expect("maxval");
        let values = raw.data.iter().map(|&v| T::from_u32(v).expect("pixel") / scale).collect();
        Ok(Self::from_raw(raw.height, raw.width, values))
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

impl BitMask {
    /// Writes binary PGM with 0 for background and 255 for foreground.
    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b == 1 { 255 } else { 0 }).collect();
        write_pgm_bytes(w, self.height, self.width, &data)
    }

    /// Reads a PGM mask; samples at or above half of maxval are foreground.
    pub fn read_pgm(r: impl Read) -> Result<Self> {
        let raw = read_pgm_raw(r)?;
        let bits = raw.data.iter().map(|&v| u8::from(2 * v >= raw.maxval)).collect();
        Ok(Self::from_raw(raw.height, raw.width, bits))
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}
