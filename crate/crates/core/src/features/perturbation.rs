//! Excitation pulse picking, local jitter and local shimmer.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::lp::ResidualSignal;

/// Positions and amplitudes of excitation pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    peak_indices: Vec<usize>,
    peak_amplitudes: Vec<f64>,
}

impl PulseTrain {
    pub fn new(peak_indices: Vec<usize>, peak_amplitudes: Vec<f64>) -> Result<Self> {
        if peak_indices.len() != peak_amplitudes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} peak positions but {} amplitudes",
                peak_indices.len(),
                peak_amplitudes.len()
            )));
        }
        if peak_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "peak positions must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            peak_indices,
            peak_amplitudes,
        })
    }

    pub fn peak_indices(&self) -> &[usize] {
        &self.peak_indices
    }

    pub fn peak_amplitudes(&self) -> &[f64] {
        &self.peak_amplitudes
    }

    pub fn len(&self) -> usize {
        self.peak_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak_indices.is_empty()
    }

    /// `T_i = index[i+1] - index[i]`, in samples.
    pub fn periods(&self) -> Vec<f64> {
        self.peak_indices
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64)
            .collect()
    }
}

/// `100 * N/(N-1) * sum|x_i - x_{i+1}| / sum x_i` over a sequence of `N`
/// periods or amplitudes.
pub fn perturbation_percent(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "need at least 2 values for a perturbation measure, got {n}"
        )));
    }
    let diffs: f64 = values.windows(2).map(|w| (w[0] - w[1]).abs()).sum();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("values must have a positive sum".into()));
    }
    let n = n as f64;
    Ok(100.0 * n / (n - 1.0) * diffs / total)
}

/// Local jitter (%) over the pulse periods.
pub fn local_jitter(p: &PulseTrain) -> Result<f64> {
    perturbation_percent(&p.periods())
}

/// Local shimmer (%) over the pulse amplitudes.
pub fn local_shimmer(p: &PulseTrain) -> Result<f64> {
    perturbation_percent(&p.peak_amplitudes)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PulseConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Fraction of the local reference amplitude a peak must reach.
    pub relative_threshold: f64,
    /// Number of pitch-period blocks on each side of a peak contributing to
    /// its reference amplitude.
    pub median_half_width: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            f0_min: 60.0,
            f0_max: 400.0,
            relative_threshold: 0.3,
            median_half_width: 4,
        }
    }
}

/// Picks excitation pulses from `|residual|`.
///
/// Candidates are local maxima, accepted greedily in decreasing amplitude
/// order when no stronger accepted peak lies closer than `fs / f0_max`.
/// A peak is kept when its amplitude reaches `relative_threshold` times the
/// rolling median of block maxima, where blocks are `fs / f0_min` samples
/// long and so contain at least one true pulse in voiced regions.
pub fn detect_pulses(residual: &ResidualSignal, cfg: &PulseConfig) -> Result<PulseTrain> {
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max) {
        return Err(Error::InvalidArgument(format!(
            "invalid f0 range [{}, {}]",
            cfg.f0_min, cfg.f0_max
        )));
    }
    let fs = residual.sample_rate as f64;
    let x: Vec<f64> = residual.samples.iter().map(|v| v.abs()).collect();
    let block = (fs / cfg.f0_min).ceil() as usize;
    if x.len() < 3 * block {
        return Err(Error::TooShort {
            needed: 3 * block,
            got: x.len(),
        });
    }
    let min_dist = (fs / cfg.f0_max).floor().max(1.0) as usize;

    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&n| x[n] > 0.0 && x[n] > x[n - 1] && x[n] >= x[n + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let mut accepted = BTreeSet::new();
    for n in candidates {
        let lo = n.saturating_sub(min_dist - 1);
        if accepted.range(lo..n + min_dist).next().is_none() {
            accepted.insert(n);
        }
    }

    let block_max: Vec<f64> = x
        .chunks(block)
        .map(|c| c.iter().fold(0.0f64, |m, &v| m.max(v)))
        .collect();
    let reference = |n: usize| -> Option<f64> {
        let b = n / block;
        let lo = b.saturating_sub(cfg.median_half_width);
        let hi = (b + cfg.median_half_width + 1).min(block_max.len());
        let mut vals: Vec<f64> = block_max[lo..hi].iter().copied().filter(|&v| v > 0.0).collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        Some(if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        })
    };

    let (indices, amplitudes): (Vec<usize>, Vec<f64>) = accepted
        .into_iter()
        .filter(|&n| reference(n).is_some_and(|r| x[n] >= cfg.relative_threshold * r))
        .map(|n| (n, x[n]))
        .unzip();
    if indices.len() < 3 {
        return Err(Error::Insufficient(format!(
            "found {} excitation pulses, need at least 3",
            indices.len()
        )));
    }
    PulseTrain::new(indices, amplitudes)
}

/// Equal-width histogram over `[lo, hi]`; out-of-range values land in the
/// edge bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<usize>> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "histogram needs bins >= 1 and lo < hi, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(counts)
}
