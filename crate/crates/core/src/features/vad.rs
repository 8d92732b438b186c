//! Energy-based silence removal.

use crate::dsp::{FrameGrid, Waveform, Window};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Activity threshold relative to the loudest frame, in dB.
    pub threshold_db: f64,
    /// Frames kept after each active region.
    pub hangover: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            threshold_db: -40.0,
            hangover: 5,
        }
    }
}

/// Drops inactive audio.
///
/// Frame `i` decides the fate of the hop-long block starting at `i * hop`;
/// the last frame also owns the samples after its block. Frames are active
/// when their energy exceeds the threshold relative to the loudest frame.
/// An all-quiet input returns an empty waveform.
pub fn remove_silence(w: &Waveform, cfg: &VadConfig) -> Result<Waveform> {
    let hop = w.ms_to_samples(cfg.hop_ms).max(1);
    let frame = w.ms_to_samples(cfg.frame_ms).max(hop);
    let grid = FrameGrid::new(frame, hop, Window::Rectangular)?;
    let s = &w.samples;
    if s.is_empty() {
        return Ok(w.clone());
    }

    let n_frames = grid.num_frames(s.len()).max(1);
    let energies: Vec<f64> = (0..n_frames)
        .map(|i| {
            let start = i * hop;
            let end = (start + frame).min(s.len());
            s[start..end].iter().map(|v| v * v).sum()
        })
        .collect();
    let peak = energies.iter().fold(0.0f64, |m, &e| m.max(e));
    if peak == 0.0 {
        return Ok(Waveform {
            samples: Vec::new(),
            sample_rate: w.sample_rate,
        });
    }
    let threshold = peak * 10f64.powf(cfg.threshold_db / 10.0);

    let mut keep = vec![false; n_frames];
    let mut since_active: Option<usize> = None;
    for (i, &e) in energies.iter().enumerate() {
        if e > threshold {
            keep[i] = true;
            since_active = Some(0);
        } else if let Some(k) = since_active {
            if k < cfg.hangover {
                keep[i] = true;
                since_active = Some(k + 1);
            } else {
                since_active = None;
            }
        }
    }

    let mut out = Vec::with_capacity(s.len());
    for (i, &k) in keep.iter().enumerate() {
        if !k {
            continue;
        }
        let start = i * hop;
        let end = if i + 1 == n_frames { s.len() } else { start + hop };
        out.extend_from_slice(&s[start..end]);
    }
    Ok(Waveform {
        samples: out,
        sample_rate: w.sample_rate,
    })
}
