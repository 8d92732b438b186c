//! Attribution networks: a learned front end over the LP residual, a
//! log-mel frame encoder, multi-head attentive statistics pooling, and
//! intermediate or late fusion of the two.

pub mod attention;
pub mod config;
mod error;
pub mod export;
pub mod input;
pub mod network;
pub mod train;

pub use attention::{
    binarize_attention, validate_attention_jsonl, AttentionMap, AttentionRecord, BinarizedAttention, TimeAxis,
};
pub use config::{Arch, BlockSpec, InputConfig, ModelConfig};
pub use error::{ModelError, Result};
pub use input::{prepare_input, Batch, ModelInput};
pub use network::{argmax, attentive_statistics, late_fuse, AttributionModel, ForwardOutput, Prediction};
pub use train::{score, train, EpochLog, Example, TrainConfig, TrainReport};
