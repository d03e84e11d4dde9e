mod activation;
mod batchnorm;
mod conv;
mod depthwise;
mod pool;

pub use activation::{Dropout, Relu};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use depthwise::DepthwiseConv2d;
pub use pool::{output_size as pool_output_size, GlobalConcatPool, Pool2d, PoolKind};

use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

/// A differentiable primitive with cached activations.
///
/// `backward` must follow a `forward(.., train = true)` on the same batch and
/// accumulates parameter gradients.
pub trait Layer {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor;
    fn backward(&mut self, grad_out: &Tensor) -> Tensor;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>);
    fn import(&mut self, prefix: &str, state: &LayerState) -> Result<(), NnError>;
}
