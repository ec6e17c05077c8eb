//! Exact 2-D DFT on centered frequency coordinates and the low-pass masks used
//! for spectral-blindness fine-tuning.
//!
//! Coordinates: row `i` of a [`SpectrumGrid`] holds frequency `u = i − ⌊H/2⌋`
//! and column `j` holds `v = j − ⌊W/2⌋`, so `(0, 0)` sits at `(⌊H/2⌋, ⌊W/2⌋)`.
//! The forward transform is unnormalized and the inverse divides by `H·W`.

use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask, Grid2D};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumGrid<T> {
    height: usize,
    width: usize,
    coefficients: Vec<Complex<T>>,
}

impl<T: Real> SpectrumGrid<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        &self.coefficients
    }

    /// Coefficient at centered frequency `(u, v)`.
    pub fn at(&self, u: isize, v: isize) -> Complex<T> {
        let (i, j) = centered_to_index(self.height, self.width, u, v);
        self.coefficients[i * self.width + j]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> T {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Zeroes every coefficient whose mask bit is 0.
    pub fn apply_mask(&mut self, mask: &BitMask) -> Result<()> {
        if mask.dims() != (self.height, self.width) {
            return Err(Error::Shape { expected: (self.height, self.width), got: mask.dims() });
        }
        for (c, &b) in self.coefficients.iter_mut().zip(mask.bits()) {
            if b == 0 {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
        Ok(())
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            coefficients: self.coefficients.iter().map(|c| c * k).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.height, self.width), (other.height, other.width));
        Self {
            height: self.height,
            width: self.width,
            coefficients: self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Centered frequency of row `i` (or column) in a dimension of size `n`.
#[inline]
pub fn index_to_frequency(i: usize, n: usize) -> isize {
    i as isize - (n / 2) as isize
}

fn centered_to_index(h: usize, w: usize, u: isize, v: isize) -> (usize, usize) {
    let i = u + (h / 2) as isize;
    let j = v + (w / 2) as isize;
    assert!(i >= 0 && (i as usize) < h && j >= 0 && (j as usize) < w, "frequency out of range");
    (i as usize, j as usize)
}

/// Twiddle table `e^{sign·2πi·m/n}` for `m in 0..n`.
fn twiddles<T: Real>(n: usize, sign: f64) -> Vec<Complex<T>> {
    (0..n)
        .map(|m| {
            let theta = sign * 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            Complex::new(T::lit(theta.cos()), T::lit(theta.sin()))
        })
        .collect()
}

/// In-place 1-D DFT along rows (`stride = 1`) or columns (`stride = width`).
fn dft_lines<T: Real>(
    data: &mut [Complex<T>],
    lines: usize,
    len: usize,
    line_step: usize,
    elem_step: usize,
    table: &[Complex<T>],
) {
    let mut input = vec![Complex::new(T::zero(), T::zero()); len];
    for line in 0..lines {
        let base = line * line_step;
        for (k, slot) in input.iter_mut().enumerate() {
            *slot = data[base + k * elem_step];
        }
        for k in 0..len {
            let mut acc = Complex::new(T::zero(), T::zero());
            let mut m = 0usize;
            for x in &input {
                acc = acc + *x * table[m];
                m += k;
                if m >= len {
                    m -= len;
                }
            }
            data[base + k * elem_step] = acc;
        }
    }
}

fn dft2_raw<T: Real>(data: &mut [Complex<T>], h: usize, w: usize, sign: f64) {
    let row_table = twiddles::<T>(w, sign);
    dft_lines(data, h, w, w, 1, &row_table);
    let col_table = twiddles::<T>(h, sign);
    dft_lines(data, w, h, 1, w, &col_table);
}

/// Moves the zero frequency from index 0 to the center (`fftshift`).
fn shift_to_center<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for i in 0..h {
        for j in 0..w {
            let si = (i + h / 2) % h;
            let sj = (j + w / 2) % w;
            out[si * w + sj] = data[i * w + j];
        }
    }
    out
}

/// Inverse of [`shift_to_center`].
fn shift_to_origin<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for i in 0..h {
        for j in 0..w {
            let si = (i + h / 2) % h;
            let sj = (j + w / 2) % w;
            out[i * w + j] = data[si * w + sj];
        }
    }
    out
}

/// Forward 2-D DFT, unnormalized, in centered coordinates.
pub fn dft2<T: Real>(image: &Grid2D<T>) -> SpectrumGrid<T> {
    let (h, w) = image.dims();
    let mut data: Vec<Complex<T>> =
        image.as_slice().iter().map(|&x| Complex::new(x, T::zero())).collect();
    dft2_raw(&mut data, h, w, -1.0);
    SpectrumGrid { height: h, width: w, coefficients: shift_to_center(&data, h, w) }
}

/// Inverse 2-D DFT keeping the complex result.
pub fn idft2_complex<T: Real>(spectrum: &SpectrumGrid<T>) -> Vec<Complex<T>> {
    let (h, w) = (spectrum.height, spectrum.width);
    let mut data = shift_to_origin(&spectrum.coefficients, h, w);
    dft2_raw(&mut data, h, w, 1.0);
    let norm = T::one() / T::from_usize_lossy(h * w);
    data.iter_mut().for_each(|c| *c = *c * norm);
    data
}

/// Inverse 2-D DFT of a spectrum that came from a real image.
///
/// Fails if the imaginary residue exceeds `1e-9` (relative to the signal peak
/// when that is above 1); the residue is otherwise dropped.
pub fn idft2<T: Real>(spectrum: &SpectrumGrid<T>) -> Result<Grid2D<T>> {
    let data = idft2_complex(spectrum);
    let peak = data.iter().map(|c| c.re.abs()).fold(T::one(), T::max);
    let residue = data.iter().map(|c| c.im.abs()).fold(T::zero(), T::max);
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(1e4)) * peak;
    if residue >= tol {
        return Err(Error::domain(format!(
            "inverse transform has imaginary residue {residue}; spectrum is not Hermitian"
        )));
    }
    Grid2D::new(spectrum.height, spectrum.width, data.into_iter().map(|c| c.re).collect())
}

const BOUNDARY_SLACK: f64 = 1e-12;

/// Passband of the circular low-pass filter: `sqrt(u² + v²) ≤ r·min(H, W)/2`.
pub fn circular_lowpass_mask(height: usize, width: usize, r: f64) -> Result<BitMask> {
    check_ratio(r)?;
    let radius = r * height.min(width) as f64 / 2.0;
    // lattice points on the boundary must not drop out to rounding
    let r2 = radius * radius * (1.0 + BOUNDARY_SLACK);
    Ok(BitMask::from_fn(height, width, |i, j| {
        let u = index_to_frequency(i, height) as f64;
        let v = index_to_frequency(j, width) as f64;
        u * u + v * v <= r2
    }))
}

/// Passband of the square low-pass filter: `max(|u|, |v|) ≤ r·min(H, W)/2`.
pub fn square_lowpass_mask(height: usize, width: usize, r: f64) -> Result<BitMask> {
    check_ratio(r)?;
    let half = r * height.min(width) as f64 / 2.0 * (1.0 + BOUNDARY_SLACK);
    Ok(BitMask::from_fn(height, width, |i, j| {
        let u = index_to_frequency(i, height).unsigned_abs() as f64;
        let v = index_to_frequency(j, width).unsigned_abs() as f64;
        u.max(v) <= half
    }))
}

/// Annulus `low ≤ ρ ≤ high` with `ρ = sqrt(u² + v²) / (min(H, W)/2)`.
pub fn band_mask(height: usize, width: usize, low: f64, high: f64) -> BitMask {
    let half = height.min(width) as f64 / 2.0;
    BitMask::from_fn(height, width, |i, j| {
        let u = index_to_frequency(i, height) as f64;
        let v = index_to_frequency(j, width) as f64;
        let rho = (u * u + v * v).sqrt() / half;
        rho >= low && rho <= high
    })
}

/// Smallest circular ratio whose passband covers every coordinate.
pub fn full_passband_ratio(height: usize, width: usize) -> f64 {
    let hu = (height / 2) as f64;
    let hv = (width / 2) as f64;
    (hu * hu + hv * hv).sqrt() / (height.min(width) as f64 / 2.0)
}

fn check_ratio(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("cutoff ratio must be positive, got {r}")));
    }
    Ok(())
}

/// `idft2(dft2(image) ⊙ mask)`. An all-pass mask returns the image untouched.
pub fn apply_spectral_mask<T: Real>(image: &Grid2D<T>, mask: &BitMask) -> Result<Grid2D<T>> {
    image.check_mask_dims(mask)?;
    if mask.count_ones() == mask.len() {
        return Ok(image.clone());
    }
    let mut spec = dft2(image);
    spec.apply_mask(mask)?;
    idft2(&spec)
}

/// Spectral-blindness transform: keep only frequencies inside the circular
/// passband of ratio `r`.
pub fn sbft<T: Real>(image: &Grid2D<T>, r: f64) -> Result<Grid2D<T>> {
    let mask = circular_lowpass_mask(image.height(), image.width(), r)?;
    apply_spectral_mask(image, &mask)
}

/// Filter shapes available for the anti-curriculum phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Circular,
    Square,
    /// Circular, with the cutoff shrinking from the full passband to `r`.
    Progressive,
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(FilterKind::Circular),
            "square" => Ok(FilterKind::Square),
            "progressive" => Ok(FilterKind::Progressive),
            other => Err(Error::domain(format!("unknown filter kind {other:?}"))),
        }
    }
}

impl FilterKind {
    /// Passband for this filter. `epoch_fraction` only matters for
    /// [`FilterKind::Progressive`].
    pub fn mask(self, height: usize, width: usize, r: f64, epoch_fraction: f64) -> Result<BitMask> {
        match self {
            FilterKind::Circular => circular_lowpass_mask(height, width, r),
            FilterKind::Square => square_lowpass_mask(height, width, r),
            FilterKind::Progressive => {
                check_ratio(r)?;
                if !(0.0..=1.0).contains(&epoch_fraction) {
                    return Err(Error::domain("epoch fraction outside [0, 1]"));
                }
                let start = full_passband_ratio(height, width);
                let ratio = start + (r - start) * epoch_fraction;
                circular_lowpass_mask(height, width, ratio)
            }
        }
    }
}

/// Square and progressive filter variants used in the filter ablation.
pub fn ablation_filter<T: Real>(
    image: &Grid2D<T>,
    kind: FilterKind,
    r: f64,
    epoch_fraction: f64,
) -> Result<Grid2D<T>> {
    let mask = kind.mask(image.height(), image.width(), r, epoch_fraction)?;
    apply_spectral_mask(image, &mask)
}

/// Spectral energy outside the circular passband of ratio `r`.
pub fn energy_outside<T: Real>(image: &Grid2D<T>, r: f64) -> Result<T> {
    let mask = circular_lowpass_mask(image.height(), image.width(), r)?;
    let spec = dft2(image);
    Ok(spec
        .coefficients
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b == 0)
        .map(|(c, _)| c.norm_sqr())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SeededRng;

    fn random_image(h: usize, w: usize, seed: u64) -> Grid2D<f64> {
        let mut rng = SeededRng::new(seed, 0);
        Grid2D::from_fn(h, w, |_, _| rng.uniform())
    }

    /// Direct O(N²) double sum, written independently of the separable path.
    fn brute_dft(image: &Grid2D<f64>, u: isize, v: isize) -> Complex<f64> {
        let (h, w) = image.dims();
        let mut acc = Complex::new(0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let phase = -2.0
                    * std::f64::consts::PI
                    * (u as f64 * y as f64 / h as f64 + v as f64 * x as f64 / w as f64);
                acc += Complex::new(phase.cos(), phase.sin()) * image.get(y, x);
            }
        }
        acc
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = Grid2D::filled(6, 5, 0.25f64);
        let spec = dft2(&img);
        for i in 0..6 {
            for j in 0..5 {
                let u = index_to_frequency(i, 6);
                let v = index_to_frequency(j, 5);
                let c = spec.at(u, v);
                if (u, v) == (0, 0) {
                    assert!((c.re - 0.25 * 30.0).abs() < 1e-12 && c.im.abs() < 1e-12);
                } else {
                    assert!(c.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_impulse_has_flat_spectrum() {
        let img = Grid2D::new(2, 2, vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        for c in dft2(&img).coefficients() {
            assert!((c.re - 1.0).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force_on_odd_and_even_sizes() {
        for (h, w) in [(4, 4), (5, 3), (6, 7)] {
            let img = random_image(h, w, 11);
            let spec = dft2(&img);
            for i in 0..h {
                for j in 0..w {
                    let (u, v) = (index_to_frequency(i, h), index_to_frequency(j, w));
                    assert!((spec.at(u, v) - brute_dft(&img, u, v)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn round_trip() {
        let img = random_image(9, 12, 3);
        let back = idft2(&dft2(&img)).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn non_hermitian_spectrum_rejected() {
        let img = random_image(4, 4, 1);
        let mut spec = dft2(&img);
        spec.coefficients[5] += Complex::new(0.0, 3.0);
        assert!(idft2(&spec).is_err());
    }

    #[test]
    fn mask_counts() {
        let m = circular_lowpass_mask(8, 8, 0.5).unwrap();
        assert_eq!(m.count_ones(), 13);
        assert_eq!(square_lowpass_mask(8, 8, 0.5).unwrap().count_ones(), 25);
        assert!(circular_lowpass_mask(8, 8, 0.0).is_err());
        let full = circular_lowpass_mask(8, 12, 2f64.sqrt() * 12.0 / 8.0).unwrap();
        assert_eq!(full.count_ones(), 96);
        // DC always on
        let tiny = circular_lowpass_mask(7, 8, 1e-6).unwrap();
        assert_eq!(tiny.count_ones(), 1);
        assert!(tiny.get(3, 4));
    }

    #[test]
    fn filter_kind_parsing() {
        assert_eq!("square".parse::<FilterKind>().unwrap(), FilterKind::Square);
        assert!("gaussian".parse::<FilterKind>().is_err());
    }

    #[test]
    fn sbft_of_constant_is_constant() {
        let img = Grid2D::filled(10, 10, 0.7);
        assert!(sbft(&img, 0.95).unwrap().max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn progressive_endpoints() {
        let img = random_image(8, 8, 5);
        let start = ablation_filter(&img, FilterKind::Progressive, 0.5, 0.0).unwrap();
        assert!(start.max_abs_diff(&img) < 1e-6);
        let end = ablation_filter(&img, FilterKind::Progressive, 0.5, 1.0).unwrap();
        assert!(end.max_abs_diff(&sbft(&img, 0.5).unwrap()) < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let img: Grid2D<f32> = random_image(8, 8, 2).cast();
        let back = idft2(&dft2(&img)).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-5);
    }
}
