//! Turning audio or cached features into padded network batches.

use vattr_core::features::{log_mel_energies, remove_silence, MelConfig, VadConfig};
use vattr_core::lp::lp_residual;
use vattr_core::{FeatureMatrix, ResidualSignal, Waveform};
use vattr_nn::Tensor;

use crate::config::{Arch, InputConfig};
use crate::error::{ModelError, Result};

/// Per-utterance inputs, each `[channels, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub residual: Option<Tensor<f32>>,
    pub logmel: Option<Tensor<f32>>,
}

impl ModelInput {
    pub fn from_parts(residual: Option<&ResidualSignal>, logmel: Option<&FeatureMatrix>) -> Self {
        Self {
            residual: residual.map(|r| standardize(1, r.samples.len(), &r.samples)),
            logmel: logmel.map(|m| standardize(m.num_features(), m.num_frames(), m.data.as_slice())),
        }
    }

    pub fn check(&self, arch: Arch) -> Result<()> {
        if arch.uses_residual() && self.residual.is_none() {
            return Err(ModelError::MissingInput(format!("{arch} needs the LP residual")));
        }
        if arch.uses_logmel() && self.logmel.is_none() {
            return Err(ModelError::MissingInput(format!("{arch} needs log-mel features")));
        }
        Ok(())
    }
}

pub fn mel_config(cfg: &InputConfig) -> MelConfig {
    MelConfig {
        n_mels: cfg.n_mels,
        n_fft: cfg.n_fft,
        frame_length: cfg.mel_frame,
        hop_length: cfg.mel_hop,
        ..MelConfig::default()
    }
}

/// Optional silence removal, then the features `arch` consumes.
pub fn prepare_input(w: &Waveform, arch: Arch, cfg: &InputConfig) -> Result<ModelInput> {
    if w.sample_rate != cfg.sample_rate {
        return Err(ModelError::Config(format!(
            "expected {} Hz audio, got {} Hz",
            cfg.sample_rate, w.sample_rate
        )));
    }
    let trimmed;
    let w = if cfg.remove_silence {
        trimmed = remove_silence(w, &VadConfig::default())?;
        if trimmed.is_empty() {
            return Err(ModelError::MissingInput("no voiced audio after silence removal".into()));
        }
        &trimmed
    } else {
        w
    };
    let residual = if arch.uses_residual() {
        Some(lp_residual(w, cfg.lp_order, cfg.lp_frame, cfg.lp_hop)?)
    } else {
        None
    };
    let logmel = if arch.uses_logmel() {
        Some(log_mel_energies(w, &mel_config(cfg))?)
    } else {
        None
    };
    Ok(ModelInput::from_parts(residual.as_ref(), logmel.as_ref()))
}

/// Zero mean, unit variance over the whole matrix. A single scalar pair so
/// the spectral shape across channels survives.
fn standardize(rows: usize, cols: usize, data: &[f64]) -> Tensor<f32> {
    let n = data.len().max(1) as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.sqrt().max(1e-8);
    let out = data.iter().map(|v| ((v - mean) * scale) as f32).collect();
    Tensor::new(&[rows, cols], out).expect("rows x cols matches data")
}

/// Zero-padded `[B, C, T_max]` tensor plus each item's valid length.
#[derive(Debug, Clone)]
pub struct Padded {
    pub tensor: Tensor<f32>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub residual: Option<Padded>,
    pub logmel: Option<Padded>,
}

impl Batch {
    pub fn collate(inputs: &[&ModelInput], arch: Arch) -> Result<Self> {
        if inputs.is_empty() {
            return Err(ModelError::MissingInput("empty batch".into()));
        }
        for i in inputs {
            i.check(arch)?;
        }
        let residual = if arch.uses_residual() {
            Some(pad(inputs.iter().map(|i| i.residual.as_ref().unwrap()))?)
        } else {
            None
        };
        let logmel = if arch.uses_logmel() {
            Some(pad(inputs.iter().map(|i| i.logmel.as_ref().unwrap()))?)
        } else {
            None
        };
        Ok(Self { residual, logmel })
    }

    pub fn len(&self) -> usize {
        self.residual
            .as_ref()
            .or(self.logmel.as_ref())
            .map_or(0, |p| p.lengths.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn pad<'a>(items: impl Iterator<Item = &'a Tensor<f32>>) -> Result<Padded> {
    let items: Vec<&Tensor<f32>> = items.collect();
    let c = items[0].shape()[0];
    if items.iter().any(|t| t.shape()[0] != c) {
        return Err(ModelError::Config("inputs in a batch differ in channel count".into()));
    }
    let t_max = items.iter().map(|t| t.shape()[1]).max().unwrap_or(0);
    let mut data = vec![0.0f32; items.len() * c * t_max];
    let mut lengths = Vec::with_capacity(items.len());
    for (b, item) in items.iter().enumerate() {
        let t = item.shape()[1];
        lengths.push(t);
        for (ch, row) in item.data().chunks(t.max(1)).enumerate().take(c) {
            let start = (b * c + ch) * t_max;
            data[start..start + t].copy_from_slice(row);
        }
    }
    Ok(Padded {
        tensor: Tensor::new(&[items.len(), c, t_max], data)?,
        lengths,
    })
}
