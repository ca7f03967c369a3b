//! Multi-modal mixer network: per-modality recurrent streams that are
//! contextualized by summaries of the other modalities, fused late for
//! sequence classification.

pub mod cells;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use cells::CellKind;
pub use data::{ModalSample, TaskSpec, TemporalMode};
pub use model::{AsoKind, MixerModel, ModelDims};
pub use scalar::Scalar;
pub use tensor::{Graph, Reduce, Tensor, Var};
pub use train::{Metrics, TrainConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;

pub type MixerModel32 = MixerModel<f32>;
pub type MixerModel64 = MixerModel<f64>;
