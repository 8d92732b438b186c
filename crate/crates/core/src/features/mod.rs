//! Handcrafted features and voice-source diagnostics.

mod bicoherence;
mod mel;
mod perturbation;
mod vad;

use std::path::Path;

pub use bicoherence::{bicoherence, BicoherenceConfig, BicoherenceMap};
pub use mel::{hz_to_mel, log_mel_energies, mel_to_hz, MelConfig, MelFilterbank, LOG_FLOOR};
pub use perturbation::{
    detect_pulses, histogram, local_jitter, local_shimmer, perturbation_percent, PulseConfig,
    PulseTrain,
};
pub use vad::{remove_silence, VadConfig};

use crate::binio::{put_u32, Cursor};
use crate::dsp::{FrameGrid, Matrix, Window};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    LogMel,
    LearnedResidual,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::LogMel => 0,
            FeatureKind::LearnedResidual => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::LogMel),
            1 => Ok(FeatureKind::LearnedResidual),
            other => Err(Error::Format(format!("unknown feature kind code {other}"))),
        }
    }
}

/// Feature-major matrix: one row per feature, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Matrix<f64>,
    pub kind: FeatureKind,
    pub frame_grid: FrameGrid,
}

impl FeatureMatrix {
    pub fn num_features(&self) -> usize {
        self.data.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.data.cols()
    }
}

const FEATURE_MAGIC: &[u8; 5] = b"VAFX1";

/// Serializes to the feature cache layout: magic, kind, rows, cols, frame
/// length, hop, window code, then row-major little-endian `f32` values.
pub fn encode_feature_cache(f: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + f.data.as_slice().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.push(f.kind.code());
    put_u32(&mut buf, f.data.rows() as u32);
    put_u32(&mut buf, f.data.cols() as u32);
    put_u32(&mut buf, f.frame_grid.frame_length() as u32);
    put_u32(&mut buf, f.frame_grid.hop_length() as u32);
    buf.push(f.frame_grid.window().code());
    for &v in f.data.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut cur = Cursor::new(bytes);
    cur.expect_magic(FEATURE_MAGIC)?;
    let kind = FeatureKind::from_code(cur.u8()?)?;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let frame_length = cur.u32()? as usize;
    let hop = cur.u32()? as usize;
    let window = Window::from_code(cur.u8()?)?;
    let values = (0..rows * cols)
        .map(|_| cur.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    cur.expect_end()?;
    Ok(FeatureMatrix {
        data: Matrix::from_vec(rows, cols, values)?,
        kind,
        frame_grid: FrameGrid::new(frame_length, hop, window)?,
    })
}

pub fn write_feature_cache(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature_cache(f)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_cache(&bytes)
}
