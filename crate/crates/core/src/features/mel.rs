use rayon::prelude::*;

use super::{FeatureKind, FeatureMatrix};
use crate::dsp::{frame_signal, DftPlan, FrameGrid, Matrix, Waveform, Window};
use crate::error::{Error, Result};

/// Energies are floored here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub n_fft: usize,
    pub frame_length: usize,
    pub hop_length: usize,
    pub f_min: f64,
    /// Defaults to Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            n_fft: 512,
            frame_length: 400,
            hop_length: 160,
            f_min: 0.0,
            f_max: None,
        }
    }
}

/// Triangular filters on the HTK mel scale, evaluated at DFT bin
/// frequencies. Rows are filters, columns are bins `0..=n_fft/2`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Matrix<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::InvalidArgument("need at least one mel band and n_fft >= 2".into()));
        }
        if !(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate as f64 / 2.0 + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "mel range [{f_min}, {f_max}] Hz is invalid for {sample_rate} Hz audio"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|b| b as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        let mut weights = Matrix::filled(n_mels, n_bins, 0.0);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for (b, &f) in bin_hz.iter().enumerate() {
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                weights.set(m, b, up.min(down).max(0.0));
            }
        }
        Ok(Self {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }
}

/// Natural log of mel-filtered power spectra, one column per Hann-windowed frame.
pub fn log_mel_energies(w: &Waveform, cfg: &MelConfig) -> Result<FeatureMatrix> {
    if cfg.n_fft < cfg.frame_length {
        return Err(Error::InvalidArgument(format!(
            "n_fft {} is smaller than the frame length {}",
            cfg.n_fft, cfg.frame_length
        )));
    }
    let grid = FrameGrid::new(cfg.frame_length, cfg.hop_length, Window::Hann)?;
    let nyquist = w.sample_rate as f64 / 2.0;
    let bank = MelFilterbank::new(
        w.sample_rate,
        cfg.n_fft,
        cfg.n_mels,
        cfg.f_min,
        cfg.f_max.unwrap_or(nyquist),
    )?;
    let frames = frame_signal(&w.samples, &grid);
    let plan = DftPlan::<f64>::new(cfg.n_fft)?;
    let n_bins = cfg.n_fft / 2 + 1;

    let columns: Vec<Vec<f64>> = (0..frames.rows())
        .into_par_iter()
        .map(|i| {
            let spec = plan.transform(frames.row(i))?;
            let power: Vec<f64> = spec[..n_bins].iter().map(|c| c.norm_sqr()).collect();
            Ok(bank
                .weights
                .iter_rows()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let n_frames = columns.len();
    let mut data = Matrix::filled(cfg.n_mels, n_frames, 0.0);
    for (t, col) in columns.iter().enumerate() {
        for (m, &v) in col.iter().enumerate() {
            data.set(m, t, v);
        }
    }
    Ok(FeatureMatrix {
        data,
        kind: FeatureKind::LogMel,
        frame_grid: grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (16000.0 * secs) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 1600], 16000).unwrap();
        let f = log_mel_energies(&w, &MelConfig::default()).unwrap();
        assert_eq!(f.num_features(), 80);
        assert_eq!(f.num_frames(), 8);
        assert!(f.data.as_slice().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_nearest_band() {
        let w = tone(1000.0, 0.5, 0.5);
        let f = log_mel_energies(&w, &MelConfig::default()).unwrap();
        let bank = MelFilterbank::new(16000, 512, 80, 0.0, 8000.0).unwrap();
        let nearest = bank
            .centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        for t in 0..f.num_frames() {
            let best = (0..80)
                .max_by(|&a, &b| f.data.get(a, t).total_cmp(f.data.get(b, t)))
                .unwrap();
            assert_eq!(best, nearest, "frame {t}");
        }
    }

    #[test]
    fn gain_adds_log_power() {
        let a = log_mel_energies(&tone(440.0, 0.2, 0.01), &MelConfig::default()).unwrap();
        let b = log_mel_energies(&tone(440.0, 0.2, 0.1), &MelConfig::default()).unwrap();
        for (x, y) in a.data.as_slice().iter().zip(b.data.as_slice()) {
            if *x > LOG_FLOOR.ln() + 1.0 {
                assert!((y - x - 100f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_fft_rejected() {
        let cfg = MelConfig {
            n_fft: 256,
            ..MelConfig::default()
        };
        let w = tone(440.0, 0.1, 0.1);
        assert!(log_mel_energies(&w, &cfg).is_err());
    }

    #[test]
    fn filterbank_has_no_holes() {
        let bank = MelFilterbank::new(16000, 512, 80, 0.0, 8000.0).unwrap();
        let first = bank.centers_hz[0];
        let last = *bank.centers_hz.last().unwrap();
        for b in 0..257 {
            let f = b as f64 * 16000.0 / 512.0;
            let total: f64 = (0..80).map(|m| *bank.weights.get(m, b)).sum();
            assert!(bank.weights.as_slice().iter().all(|&v| v >= 0.0));
            if f >= first && f <= last {
                assert!(total > 0.0, "hole at bin {b}");
            }
        }
    }
}
