//! Dual-phase curriculum training for context-entangled segmentation.
//!
//! Phase one admits samples progressively by checkpoint-evaluated difficulty and
//! reweights them from the temporal statistics of their difficulty history, with
//! entropy-based pixel weights on top. Phase two fine-tunes on low-pass filtered
//! inputs so the network cannot lean on high-frequency texture.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). The aliases at the crate root pin everything to `f64`, which
//! is what the CLI and the experiment harness use.

pub mod curriculum;
pub mod error;
pub mod exec;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod spectral;
pub mod synthdata;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use scalar::Real;

/// Real raster in double precision.
pub type Grid = grid::Grid2D<f64>;
/// Centered complex spectrum in double precision.
pub type Spectrum = spectral::SpectrumGrid<f64>;
/// Network parameters in double precision.
pub type Params = model::ConvNetParams<f64>;
/// Adam optimizer state in double precision.
pub type Adam = model::AdamState<f64>;
/// Training sample in double precision.
pub type Sample = synthdata::Sample<f64>;
/// Per-sample weight breakdown in double precision.
pub type Weights = weighting::SampleWeightStats<f64>;
/// Loss breakdown in double precision.
pub type Losses = loss::LossBreakdown<f64>;

pub use grid::{BitMask, SeededRng};
