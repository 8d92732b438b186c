//! Framing, windows, DFT and autocorrelation.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Converts a duration in milliseconds to a whole number of samples.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        (ms * self.sample_rate as f64 / 1000.0).round() as usize
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.rows).map(move |r| self.row(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        if n == 1 {
            return vec![T::one()];
        }
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                let w = match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                };
                T::of(w)
            })
            .collect()
    }

    pub fn code(self) -> u8 {
        match self {
            Window::Rectangular => 0,
            Window::Hann => 1,
            Window::Hamming => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Window::Rectangular),
            1 => Ok(Window::Hann),
            2 => Ok(Window::Hamming),
            other => Err(Error::Format(format!("unknown window code {other}"))),
        }
    }
}

/// Frame bookkeeping: frame length, hop and analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGrid {
    frame_length: usize,
    hop_length: usize,
    window: Window,
}

impl FrameGrid {
    pub fn new(frame_length: usize, hop_length: usize, window: Window) -> Result<Self> {
        if hop_length == 0 {
            return Err(Error::InvalidArgument("hop length must be at least 1".into()));
        }
        if frame_length < hop_length {
            return Err(Error::InvalidArgument(format!(
                "frame length {frame_length} is shorter than hop length {hop_length}"
            )));
        }
        Ok(Self {
            frame_length,
            hop_length,
            window,
        })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Number of whole frames that fit in a signal; a trailing partial frame is dropped.
    pub fn num_frames(&self, signal_length: usize) -> usize {
        if signal_length < self.frame_length {
            0
        } else {
            (signal_length - self.frame_length) / self.hop_length + 1
        }
    }
}

/// Slices `samples` into windowed frames. Returns an empty matrix when the
/// signal is shorter than one frame.
pub fn frame_signal<T: Real>(samples: &[T], grid: &FrameGrid) -> Matrix<T> {
    let n = grid.num_frames(samples.len());
    let len = grid.frame_length;
    let window = grid.window.coefficients::<T>(len);
    let mut data = Vec::with_capacity(n * len);
    for i in 0..n {
        let start = i * grid.hop_length;
        data.extend(
            samples[start..start + len]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| s * w),
        );
    }
    Matrix {
        rows: n,
        cols: len,
        data,
    }
}

/// A reusable forward DFT of fixed size. Inputs shorter than the size are
/// zero-padded.
#[derive(Clone)]
pub struct DftPlan<T: Real> {
    n_fft: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for DftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DftPlan").field("n_fft", &self.n_fft).finish()
    }
}

impl<T: Real> DftPlan<T> {
    pub fn new(n_fft: usize) -> Result<Self> {
        if n_fft == 0 {
            return Err(Error::InvalidArgument("n_fft must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self { n_fft, fft })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn transform(&self, x: &[T]) -> Result<Vec<Complex<T>>> {
        if x.len() > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "input length {} exceeds n_fft {}",
                x.len(),
                self.n_fft
            )));
        }
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        buf.resize(self.n_fft, Complex::new(T::zero(), T::zero()));
        self.fft.process(&mut buf);
        Ok(buf)
    }
}

/// `X[k] = sum_n x[n] exp(-j 2 pi k n / n_fft)` with `x` zero-padded to `n_fft`.
pub fn dft<T: Real>(x: &[T], n_fft: usize) -> Result<Vec<Complex<T>>> {
    DftPlan::new(n_fft)?.transform(x)
}

/// Biased (unnormalized) autocorrelation `r[k] = sum_n x[n] x[n+k]` for `k = 0..=max_lag`.
pub fn autocorrelation<T: Real>(x: &[T], max_lag: usize) -> Result<Vec<T>> {
    if max_lag >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "max lag {max_lag} must be below the signal length {}",
            x.len()
        )));
    }
    Ok((0..=max_lag)
        .map(|k| {
            x[..x.len() - k]
                .iter()
                .zip(&x[k..])
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct_dft(x: &[f64], n: usize) -> Vec<Complex<f64>> {
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (i, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc + Complex::new(v * ang.cos(), v * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn frames_identity_case() {
        let x: Vec<f64> = (0..400).map(|i| i as f64).collect();
        let grid = FrameGrid::new(400, 160, Window::Rectangular).unwrap();
        let m = frame_signal(&x, &grid);
        assert_eq!(m.rows(), 1);
        assert_eq!(m.row(0), &x[..]);
    }

    #[test]
    fn frames_count_and_offsets() {
        let x: Vec<f64> = (0..560).map(|i| i as f64).collect();
        let grid = FrameGrid::new(400, 160, Window::Rectangular).unwrap();
        let m = frame_signal(&x, &grid);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.row(1)[0], 160.0);
        assert_eq!(frame_signal(&x[..399], &grid).rows(), 0);
    }

    #[test]
    fn constant_signal_yields_window() {
        let x = vec![1.0f64; 1000];
        let grid = FrameGrid::new(400, 160, Window::Hann).unwrap();
        let w = Window::Hann.coefficients::<f64>(400);
        for row in frame_signal(&x, &grid).iter_rows() {
            assert_eq!(row, &w[..]);
        }
    }

    #[test]
    fn grid_rejects_bad_params() {
        assert!(FrameGrid::new(400, 0, Window::Hann).is_err());
        assert!(FrameGrid::new(100, 160, Window::Hann).is_err());
    }

    #[test]
    fn dft_impulse_and_zeros() {
        let mut x = vec![0.0f64; 8];
        x[0] = 1.0;
        for bin in dft(&x, 8).unwrap() {
            assert!((bin - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(dft(&[0.0f64; 8], 8).unwrap().iter().all(|b| b.norm() == 0.0));
        assert!(dft(&[0.0f64; 9], 8).is_err());
    }

    #[test]
    fn dft_cosine_peaks() {
        let n = 64;
        let k0 = 5;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * (k0 * i) as f64 / n as f64).cos())
            .collect();
        let fast = dft(&x, n).unwrap();
        let slow = direct_dft(&x, n);
        for k in 0..n {
            assert!((fast[k] - slow[k]).norm() < 1e-9);
            let expect = if k == k0 || k == n - k0 { 32.0 } else { 0.0 };
            assert!((fast[k].norm() - expect).abs() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn autocorrelation_examples() {
        assert_eq!(autocorrelation(&[1.0, 0.0, 0.0, 0.0], 2).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(autocorrelation(&[1.0, 1.0], 1).unwrap(), vec![2.0, 1.0]);
        assert!(autocorrelation(&[1.0, 1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn dft_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 1..64),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let y: Vec<f64> = x.iter().rev().map(|v| v * 0.5 + 0.1).collect();
            let n = 64;
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = dft(&combo, n).unwrap();
            let fx = dft(&x, n).unwrap();
            let fy = dft(&y, n).unwrap();
            for k in 0..n {
                let rhs = fx[k] * alpha + fy[k] * beta;
                prop_assert!((lhs[k] - rhs).norm() < 1e-9);
            }
        }

        #[test]
        fn parseval(x in prop::collection::vec(-1.0f64..1.0, 1..64)) {
            let n = 64;
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spec: f64 = dft(&x, n).unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((energy - spec).abs() <= 1e-9 * energy.max(1e-12));
        }

        #[test]
        fn rectangular_non_overlapping_frames_tile(x in prop::collection::vec(-1.0f64..1.0, 1..200), len in 1usize..20) {
            let grid = FrameGrid::new(len, len, Window::Rectangular).unwrap();
            let m = frame_signal(&x, &grid);
            let joined: Vec<f64> = m.as_slice().to_vec();
            prop_assert_eq!(&joined[..], &x[..joined.len()]);
            prop_assert_eq!(joined.len(), (x.len() / len) * len);
        }

        #[test]
        fn autocorrelation_reverse_symmetry(x in prop::collection::vec(-1.0f64..1.0, 2..50)) {
            let lag = x.len() - 1;
            let fwd = autocorrelation(&x, lag).unwrap();
            let rev: Vec<f64> = x.iter().rev().copied().collect();
            let bwd = autocorrelation(&rev, lag).unwrap();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((fwd[0] - energy).abs() < 1e-12);
            for k in 0..=lag {
                prop_assert!((fwd[k] - bwd[k]).abs() < 1e-12);
                prop_assert!(fwd[0] + 1e-12 >= fwd[k].abs());
            }
        }
    }
}
