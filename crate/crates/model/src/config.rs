use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vattr_core::lp::EXPERIMENT_LP_ORDER;
use vattr_nn::receptive::{effective_receptive_field, LayerSpec};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Learned front end on the LP residual, then the frame encoder.
    Lpr,
    /// Frame encoder on log-mel energies.
    Lms,
    /// Both branches, hiddens concatenated before pooling.
    FuseIntermediate,
}

impl Arch {
    pub fn uses_residual(self) -> bool {
        matches!(self, Arch::Lpr | Arch::FuseIntermediate)
    }

    pub fn uses_logmel(self) -> bool {
        matches!(self, Arch::Lms | Arch::FuseIntermediate)
    }

    pub fn system_name(self) -> &'static str {
        match self {
            Arch::Lpr => "LPR-DNN",
            Arch::Lms => "LMS-DNN",
            Arch::FuseIntermediate => "LPR+LMS-DNN",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lpr => "lpr",
            Arch::Lms => "lms",
            Arch::FuseIntermediate => "fuse-intermediate",
        })
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lpr" => Ok(Arch::Lpr),
            "lms" => Ok(Arch::Lms),
            "fuse-intermediate" | "fuse" => Ok(Arch::FuseIntermediate),
            other => Err(ModelError::Config(format!(
                "unknown architecture {other:?} (expected lpr, lms or fuse-intermediate)"
            ))),
        }
    }
}

/// One conv → ReLU → dropout → layer-norm block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl BlockSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            dilation,
        }
    }

    pub fn layer(&self) -> LayerSpec {
        LayerSpec::new(self.kernel, self.stride, self.dilation)
    }
}

/// How waveforms become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub sample_rate: u32,
    pub lp_order: usize,
    pub lp_frame: usize,
    pub lp_hop: usize,
    pub n_mels: usize,
    pub n_fft: usize,
    pub mel_frame: usize,
    pub mel_hop: usize,
    pub remove_silence: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            lp_order: EXPERIMENT_LP_ORDER,
            lp_frame: 400,
            lp_hop: 160,
            n_mels: 80,
            n_fft: 512,
            mel_frame: 400,
            mel_hop: 160,
            remove_silence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_classes: usize,
    /// Channels of the frame-level hidden of each branch.
    pub hidden: usize,
    /// Attention bottleneck width.
    pub bottleneck: usize,
    pub num_heads: usize,
    pub segment_hidden: usize,
    pub dropout: f64,
    pub front_end: Vec<BlockSpec>,
    pub lpr_encoder: Vec<BlockSpec>,
    pub lms_encoder: Vec<BlockSpec>,
    pub input: InputConfig,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch, seed: u64) -> Self {
        Self {
            arch,
            num_classes: vattr_core::data::NUM_CLASSES,
            hidden: 128,
            bottleneck: 64,
            num_heads: 1,
            segment_hidden: 128,
            dropout: 0.1,
            front_end: default_front_end(),
            lpr_encoder: default_lpr_encoder(),
            lms_encoder: default_lms_encoder(),
            input: InputConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.num_classes < 2 || self.num_heads == 0 || self.segment_hidden == 0 {
            return bad("classes, heads and segment width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        let all = self.front_end.iter().chain(&self.lpr_encoder).chain(&self.lms_encoder);
        for b in all {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 || b.dilation == 0 {
                return bad(format!("degenerate block {b:?}"));
            }
        }
        if self.bottleneck == 0 || self.bottleneck >= self.fused_hidden() {
            return bad(format!(
                "bottleneck {} must be below the hidden width {}",
                self.bottleneck,
                self.fused_hidden()
            ));
        }
        if self.arch.uses_residual() {
            if self.front_end.is_empty() || self.lpr_encoder.is_empty() {
                return bad("residual branch needs front-end and encoder blocks".into());
            }
            if self.lpr_encoder.last().unwrap().out_channels != self.hidden {
                return bad(format!("residual encoder must end with {} channels", self.hidden));
            }
        }
        if self.arch.uses_logmel() {
            if self.lms_encoder.is_empty() {
                return bad("log-mel branch needs encoder blocks".into());
            }
            if self.lms_encoder.last().unwrap().out_channels != self.hidden {
                return bad(format!("log-mel encoder must end with {} channels", self.hidden));
            }
        }
        Ok(())
    }

    /// Channels entering attention pooling.
    pub fn fused_hidden(&self) -> usize {
        match self.arch {
            Arch::FuseIntermediate => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.fused_hidden() * self.num_heads
    }

    /// Residual branch from raw samples to hidden frames, in samples.
    pub fn lpr_receptive_field(&self) -> (usize, usize) {
        let layers: Vec<LayerSpec> = self.front_end.iter().chain(&self.lpr_encoder).map(BlockSpec::layer).collect();
        effective_receptive_field(&layers).unwrap_or((1, 1))
    }

    /// Log-mel encoder in mel frames.
    pub fn lms_receptive_field_frames(&self) -> (usize, usize) {
        let layers: Vec<LayerSpec> = self.lms_encoder.iter().map(BlockSpec::layer).collect();
        effective_receptive_field(&layers).unwrap_or((1, 1))
    }

    /// Log-mel accounting with the hop as a leading layer and every encoder
    /// dilation scaled by the hop: receptive field in samples, stride in
    /// mel frames.
    pub fn lms_receptive_field_samples(&self) -> (usize, usize) {
        let hop = self.input.mel_hop;
        let layers: Vec<LayerSpec> = std::iter::once(LayerSpec::new(hop, 1, 1))
            .chain(
                self.lms_encoder
                    .iter()
                    .map(|b| LayerSpec::new(b.kernel, b.stride, b.dilation * hop)),
            )
            .collect();
        effective_receptive_field(&layers).unwrap_or((1, 1))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sample-level front end: 1 → 32 → 64 → 64 channels, total stride 64.
pub fn default_front_end() -> Vec<BlockSpec> {
    vec![
        BlockSpec::new(32, 48, 4, 1),
        BlockSpec::new(64, 5, 4, 1),
        BlockSpec::new(64, 4, 4, 1),
    ]
}

/// Dilated encoder over the front-end frames.
pub fn default_lpr_encoder() -> Vec<BlockSpec> {
    vec![
        BlockSpec::new(128, 5, 1, 1),
        BlockSpec::new(128, 3, 1, 2),
        BlockSpec::new(128, 3, 1, 4),
        BlockSpec::new(128, 3, 1, 8),
        BlockSpec::new(128, 1, 1, 1),
    ]
}

/// Strided encoder over log-mel frames.
pub fn default_lms_encoder() -> Vec<BlockSpec> {
    vec![
        BlockSpec::new(128, 7, 2, 1),
        BlockSpec::new(128, 3, 2, 1),
        BlockSpec::new(128, 3, 3, 1),
        BlockSpec::new(128, 2, 1, 1),
        BlockSpec::new(128, 1, 1, 1),
    ]
}
