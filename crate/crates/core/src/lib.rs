//! Signal processing, voice-source diagnostics, corpus handling and metrics
//! for attributing synthetic speech to the algorithm that generated it.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); feature
//! extraction runs in `f64`.

pub mod binio;
pub mod data;
pub mod dsp;
mod error;
pub mod eval;
pub mod features;
pub mod lp;
mod scalar;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Real;

pub use dsp::{FrameGrid, Matrix, Waveform, Window};
pub use features::{FeatureKind, FeatureMatrix};
pub use lp::{LpResult, ResidualSignal};

pub type Complex32 = num_complex::Complex<f32>;
pub type Complex64 = num_complex::Complex<f64>;
pub type LpResult32 = LpResult<f32>;
pub type LpResult64 = LpResult<f64>;
pub type BicoherenceMap64 = features::BicoherenceMap<f64>;
