//! Small reverse-mode autodiff engine: 1-D convolution, dense, layer norm,
//! dropout, ReLU, softmax over time, cross-entropy and Adam.

pub mod checkpoint;
mod error;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod receptive;
mod scalar;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{Graph, Var};
pub use layers::{Conv1d, Dense, LayerNorm};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use receptive::{effective_receptive_field, LayerSpec};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
