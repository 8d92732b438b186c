//! Segment-averaged bicoherence (normalized bispectrum).

use std::fmt::Write as _;

use num_complex::Complex;

use crate::dsp::{frame_signal, DftPlan, FrameGrid, Matrix, Window};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Segments below this count make the normalization meaningless.
pub const MIN_SEGMENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BicoherenceConfig {
    pub segment_length: usize,
    pub n_fft: usize,
    /// Fraction of a segment shared with the next one, in `[0, 1)`.
    pub overlap: f64,
}

impl Default for BicoherenceConfig {
    fn default() -> Self {
        Self {
            segment_length: 256,
            n_fft: 256,
            overlap: 0.5,
        }
    }
}

impl BicoherenceConfig {
    pub fn hop(&self) -> usize {
        ((self.segment_length as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// Bicoherence over the grid `(k1, k2) in [0, n_fft/2]^2`. Cells with
/// `k1 + k2 > n_fft/2` are outside the principal domain and hold zero.
#[derive(Debug, Clone)]
pub struct BicoherenceMap<T> {
    pub values: Matrix<Complex<T>>,
    pub n_fft: usize,
    pub num_windows: usize,
}

impl<T: Real> BicoherenceMap<T> {
    pub fn magnitude(&self, k1: usize, k2: usize) -> T {
        self.values.get(k1, k2).norm()
    }

    /// Magnitude grid as CSV: one row per `k1`, one column per `k2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let side = self.values.cols();
        out.push_str("k1");
        for k2 in 0..side {
            let _ = write!(out, ",{k2}");
        }
        out.push('\n');
        for k1 in 0..self.values.rows() {
            let _ = write!(out, "{k1}");
            for k2 in 0..side {
                let _ = write!(out, ",{:.6}", self.magnitude(k1, k2).to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }
}

/// Hann-windowed segments, averaged triple products normalized by the
/// averaged power terms:
///
/// `B(k1,k2) = (1/W) sum_w X1 X2 X3* / sqrt((1/W) sum_w |X1 X2|^2 * (1/W) sum_w |X3|^2)`
///
/// with `X3 = X(k1 + k2)`. By Cauchy–Schwarz `|B| <= 1`. Zero denominators
/// give zero.
pub fn bicoherence<T: Real>(x: &[T], cfg: &BicoherenceConfig) -> Result<BicoherenceMap<T>> {
    if cfg.n_fft < cfg.segment_length {
        return Err(Error::InvalidArgument(format!(
            "n_fft {} is smaller than the segment length {}",
            cfg.n_fft, cfg.segment_length
        )));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::InvalidArgument(format!("overlap {} not in [0, 1)", cfg.overlap)));
    }
    let grid = FrameGrid::new(cfg.segment_length, cfg.hop(), Window::Hann)?;
    let segments = frame_signal(x, &grid);
    let w = segments.rows();
    if w < MIN_SEGMENTS {
        return Err(Error::Insufficient(format!(
            "bicoherence needs at least {MIN_SEGMENTS} segments, signal yields {w}"
        )));
    }
    let plan = DftPlan::<T>::new(cfg.n_fft)?;
    let spectra = segments
        .iter_rows()
        .map(|s| plan.transform(s))
        .collect::<Result<Vec<_>>>()?;

    let half = cfg.n_fft / 2;
    let zero = Complex::new(T::zero(), T::zero());
    let inv_w = T::one() / T::of_usize(w);
    let mut values = Matrix::filled(half + 1, half + 1, zero);
    for k1 in 0..=half {
        for k2 in 0..=half - k1 {
            let k3 = k1 + k2;
            let mut num = zero;
            let mut pair_power = T::zero();
            let mut sum_power = T::zero();
            for spec in &spectra {
                let pair = spec[k1] * spec[k2];
                num += pair * spec[k3].conj();
                pair_power += pair.norm_sqr();
                sum_power += spec[k3].norm_sqr();
            }
            let denom = (pair_power * inv_w * sum_power * inv_w).sqrt();
            if denom > T::zero() {
                values.set(k1, k2, num * inv_w / denom);
            }
        }
    }
    Ok(BicoherenceMap {
        values,
        n_fft: cfg.n_fft,
        num_windows: w,
    })
}
