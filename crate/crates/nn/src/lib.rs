//! A small CPU convolutional network trainer.
//!
//! Networks are sequential: a pointwise stem, a list of hidden layers
//! ([`LayerSpec`]) and a fixed classifier head (global average+max pooling,
//! batch norm, dropout, dense). Everything runs in `f64` so gradients can be
//! checked against finite differences.

pub mod layers;
mod network;
mod optim;
mod param;
mod tensor;
mod train;

pub use layers::{Layer, PoolKind};
pub use network::{
    widened_channels, LayerShape, LayerSpec, Network, NetworkSpec, NetworkState, PartialState,
};
pub use optim::{Adam, CosineSchedule};
pub use param::{LayerState, NamedTensor, Param};
pub use tensor::Tensor;
pub use train::{accuracy, argmax, predict_proba, softmax, softmax_cross_entropy, train_epoch, LabeledData};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing tensor `{0}` in layer state")]
    MissingTensor(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
}
