//! Linear prediction: Levinson–Durbin, order selection and inverse filtering.
//!
//! Sign convention: the predictor is `s_hat[n] = sum_k a_k s[n-k]`, so the
//! inverse filter is `A(z) = 1 - sum_k a_k z^-k` and the all-pole synthesis
//! filter is `G / A(z)`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dsp::{autocorrelation, FrameGrid, Waveform, Window};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Order used by the experiments; overrides [`default_lp_order`] at 16 kHz.
pub const EXPERIMENT_LP_ORDER: usize = 23;

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult<T> {
    /// Prediction coefficients `a_1..a_K`.
    pub coeffs: Vec<T>,
    /// `sqrt` of the final prediction error.
    pub gain: T,
    /// Reflection (PARCOR) coefficients, one per stage.
    pub reflection: Vec<T>,
}

impl<T: Real> LpResult<T> {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Applies `A(z)` to `signal[start..end]`, reading up to `order` samples of
    /// history before `start` (zeros before the signal begins).
    pub fn inverse_filter_range(&self, signal: &[T], start: usize, end: usize, out: &mut [T]) {
        debug_assert_eq!(out.len(), end - start);
        for (o, n) in out.iter_mut().zip(start..end) {
            let mut acc = signal[n];
            for (k, &a) in self.coeffs.iter().enumerate() {
                let lag = k + 1;
                if lag > n {
                    break;
                }
                acc -= a * signal[n - lag];
            }
            *o = acc;
        }
    }
}

/// One resonance per kHz plus four, rounded up to the next odd integer.
pub fn default_lp_order(sample_rate: u32) -> Result<usize> {
    if sample_rate < 1000 {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} Hz is below 1 kHz"
        )));
    }
    let k = (4.0 + sample_rate as f64 / 1000.0).ceil() as usize;
    Ok(if k % 2 == 0 { k + 1 } else { k })
}

/// Solves the Yule–Walker equations for an order-`order` predictor.
pub fn levinson_durbin<T: Real>(r: &[T], order: usize) -> Result<LpResult<T>> {
    if r.len() < order + 1 {
        return Err(Error::InvalidArgument(format!(
            "autocorrelation has {} lags, order {order} needs {}",
            r.len(),
            order + 1
        )));
    }
    if !(r[0] > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "autocorrelation r[0] = {} must be positive",
            r[0]
        )));
    }
    let mut a = vec![T::zero(); order];
    let mut prev = vec![T::zero(); order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        if !(k.abs() < T::one()) {
            return Err(Error::UnstableReflection {
                stage: i + 1,
                value: k.to_f64_lossy(),
            });
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        reflection.push(k);
        err *= T::one() - k * k;
    }
    Ok(LpResult {
        coeffs: a,
        gain: err.max(T::zero()).sqrt(),
        reflection,
    })
}

/// Windows a frame, takes its autocorrelation and runs Levinson–Durbin.
/// Returns `None` for an all-zero frame.
pub fn analyze_frame<T: Real>(
    frame: &[T],
    order: usize,
    window: Window,
) -> Result<Option<LpResult<T>>> {
    let w = window.coefficients::<T>(frame.len());
    let windowed: Vec<T> = frame.iter().zip(&w).map(|(&s, &c)| s * c).collect();
    let r = autocorrelation(&windowed, order)?;
    if r[0] == T::zero() {
        return Ok(None);
    }
    levinson_durbin(&r, order).map(Some)
}

/// Inverse-filtered excitation estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub order: usize,
    pub frame_grid: FrameGrid,
}

impl ResidualSignal {
    pub fn to_waveform(&self) -> Waveform {
        Waveform {
            samples: self.samples.clone(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Per-frame LP analysis plus the residual it yields.
#[derive(Debug, Clone)]
pub struct ResidualAnalysis {
    pub residual: ResidualSignal,
    /// `None` for zero-energy frames.
    pub frames: Vec<Option<LpResult<f64>>>,
}

/// LP residual with Hamming-windowed coefficient estimation.
///
/// Frame `i` covers `[i*hop, i*hop + frame_length)`; its coefficients filter
/// the hop-long segment centered in that frame. The first segment is extended
/// back to sample 0 and the last one forward to the end of the signal, so the
/// residual has the same length as the input. Filtering runs on the
/// unwindowed samples with true history as memory.
pub fn lp_residual(
    w: &Waveform,
    order: usize,
    frame_length: usize,
    hop_length: usize,
) -> Result<ResidualSignal> {
    lp_residual_analysis(w, order, frame_length, hop_length).map(|a| a.residual)
}

pub fn lp_residual_analysis(
    w: &Waveform,
    order: usize,
    frame_length: usize,
    hop_length: usize,
) -> Result<ResidualAnalysis> {
    let grid = FrameGrid::new(frame_length, hop_length, Window::Hamming)?;
    if w.len() < frame_length {
        return Err(Error::TooShort {
            needed: frame_length,
            got: w.len(),
        });
    }
    if order >= frame_length {
        return Err(Error::InvalidArgument(format!(
            "LP order {order} must be below the frame length {frame_length}"
        )));
    }
    let s = &w.samples;
    let n_frames = grid.num_frames(s.len());
    let offset = (frame_length - hop_length) / 2;

    let frames: Vec<Option<LpResult<f64>>> = (0..n_frames)
        .into_par_iter()
        .map(|i| {
            let start = i * hop_length;
            analyze_frame(&s[start..start + frame_length], order, Window::Hamming)
        })
        .collect::<Result<_>>()?;

    let mut residual = vec![0.0; s.len()];
    for (i, lp) in frames.iter().enumerate() {
        let seg_start = if i == 0 { 0 } else { i * hop_length + offset };
        let seg_end = if i + 1 == n_frames {
            s.len()
        } else {
            (i + 1) * hop_length + offset
        };
        if let Some(lp) = lp {
            lp.inverse_filter_range(s, seg_start, seg_end, &mut residual[seg_start..seg_end]);
        }
    }
    Ok(ResidualAnalysis {
        residual: ResidualSignal {
            samples: residual,
            sample_rate: w.sample_rate,
            order,
            frame_grid: grid,
        },
        frames,
    })
}

const RESIDUAL_MAGIC: &[u8; 5] = b"VARS1";

/// Raw float64 residual dump with a small header:
/// magic, sample rate, order, frame length, hop, window code, sample count,
/// then little-endian `f64` samples.
pub fn write_residual_raw(path: impl AsRef<Path>, r: &ResidualSignal) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(32 + r.samples.len() * 8);
    buf.extend_from_slice(RESIDUAL_MAGIC);
    buf.extend_from_slice(&r.sample_rate.to_le_bytes());
    buf.extend_from_slice(&(r.order as u32).to_le_bytes());
    buf.extend_from_slice(&(r.frame_grid.frame_length() as u32).to_le_bytes());
    buf.extend_from_slice(&(r.frame_grid.hop_length() as u32).to_le_bytes());
    buf.push(r.frame_grid.window().code());
    buf.extend_from_slice(&(r.samples.len() as u64).to_le_bytes());
    for s in &r.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_residual_raw(path: impl AsRef<Path>) -> Result<ResidualSignal> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = crate::binio::Cursor::new(&bytes);
    cur.expect_magic(RESIDUAL_MAGIC)?;
    let sample_rate = cur.u32()?;
    let order = cur.u32()? as usize;
    let frame_length = cur.u32()? as usize;
    let hop = cur.u32()? as usize;
    let window = Window::from_code(cur.u8()?)?;
    let n = cur.u64()? as usize;
    let samples = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    cur.expect_end()?;
    Ok(ResidualSignal {
        samples,
        sample_rate,
        order,
        frame_grid: FrameGrid::new(frame_length, hop, window)?,
    })
}
