use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    pool_output_size, BatchNorm2d, Conv2d, DepthwiseConv2d, Dropout, GlobalConcatPool, Layer,
    Pool2d, PoolKind, Relu,
};
use crate::param::{LayerState, Param};
use crate::tensor::Tensor;
use crate::NnError;

/// One hidden layer of a sequential network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        batchnorm: bool,
        relu: bool,
    },
    /// Depthwise k×k followed by a pointwise 1×1 convolution.
    SepConv {
        kernel: usize,
        batchnorm: bool,
        relu: bool,
    },
    /// Stride-2 pooling; a multiplier other than 1 widens the output with a
    /// pointwise convolution.
    Pool {
        kind: PoolKind,
        kernel: usize,
        multiplier: f64,
    },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel count produced by the pointwise stem.
    pub stem_width: usize,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    pub dropout: f64,
}

/// Channel and spatial bookkeeping for one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_size: (usize, usize),
    pub out_size: (usize, usize),
}

/// Output width of a pooling layer with the given channel multiplier.
pub fn widened_channels(in_channels: usize, multiplier: f64) -> usize {
    ((in_channels as f64 * multiplier).round() as usize).max(1)
}

fn pool_stride(size: (usize, usize)) -> usize {
    if size.0 <= 1 || size.1 <= 1 {
        1
    } else {
        2
    }
}

impl NetworkSpec {
    /// Shape inference over the hidden layers.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut channels = self.stem_width;
        let mut size = (self.height, self.width);
        self.layers
            .iter()
            .map(|layer| {
                let (out_channels, out_size) = match layer {
                    LayerSpec::Pool {
                        kernel, multiplier, ..
                    } => {
                        let stride = pool_stride(size);
                        (
                            widened_channels(channels, *multiplier),
                            (
                                pool_output_size(size.0, *kernel, stride),
                                pool_output_size(size.1, *kernel, stride),
                            ),
                        )
                    }
                    _ => (channels, size),
                };
                let shape = LayerShape {
                    in_channels: channels,
                    out_channels,
                    in_size: size,
                    out_size,
                };
                channels = out_channels;
                size = out_size;
                shape
            })
            .collect()
    }

    pub fn feature_channels(&self) -> usize {
        self.layer_shapes()
            .last()
            .map_or(self.stem_width, |s| s.out_channels)
    }
}

/// A chain of primitives forming one addressable unit of the network.
struct Block {
    parts: Vec<(&'static str, Box<dyn Layer>)>,
}

impl Block {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut cur = x.clone();
        for (_, layer) in &mut self.parts {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut cur = grad.clone();
        for (_, layer) in self.parts.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.parts
            .iter_mut()
            .flat_map(|(_, l)| l.params_mut())
            .collect()
    }

    fn export(&self) -> LayerState {
        let mut tensors = Vec::new();
        for (name, layer) in &self.parts {
            layer.export(&format!("{name}."), &mut tensors);
        }
        LayerState { tensors }
    }

    fn import(&mut self, state: &LayerState) -> Result<(), NnError> {
        for (name, layer) in &mut self.parts {
            layer.import(&format!("{name}."), state)?;
        }
        Ok(())
    }
}

/// Exported parameters of a whole network, addressed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub stem: LayerState,
    pub nodes: Vec<LayerState>,
    pub head: LayerState,
}

/// Parameters to copy into a freshly initialized network; `None` entries keep
/// their fresh initialization.
#[derive(Debug, Clone, Default)]
pub struct PartialState {
    pub stem: Option<LayerState>,
    pub nodes: Vec<Option<LayerState>>,
    pub head: Option<LayerState>,
}

/// Stem, hidden layers and classifier head of a sequential CNN.
pub struct Network {
    spec: NetworkSpec,
    stem: Block,
    nodes: Vec<Block>,
    head: Block,
}

impl Network {
    /// Builds a network with He-initialized weights.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        if spec.in_channels == 0 || spec.stem_width == 0 || spec.classes == 0 {
            return Err(NnError::Shape("network dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Block {
            parts: vec![(
                "conv",
                Box::new(Conv2d::new(spec.in_channels, spec.stem_width, 1, &mut rng)),
            )],
        };
        let shapes = spec.layer_shapes();
        let mut nodes = Vec::with_capacity(spec.layers.len());
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            nodes.push(build_block(layer, shape, &mut rng)?);
        }
        let features = spec.feature_channels();
        let head = Block {
            parts: vec![
                ("pool", Box::new(GlobalConcatPool::new())),
                ("bn", Box::new(BatchNorm2d::new(2 * features))),
                ("dropout", Box::new(Dropout::new(spec.dropout, seed ^ 0x9e37_79b9))),
                ("dense", Box::new(Conv2d::new(2 * features, spec.classes, 1, &mut rng))),
            ],
        };
        Ok(Self {
            spec: spec.clone(),
            stem,
            nodes,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Returns logits of shape (batch, classes, 1, 1).
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut cur = self.stem.forward(x, train);
        for node in &mut self.nodes {
            cur = node.forward(&cur, train);
        }
        self.head.forward(&cur, train)
    }

    pub fn backward(&mut self, grad_logits: &Tensor) {
        let mut g = self.head.backward(grad_logits);
        for node in self.nodes.iter_mut().rev() {
            g = node.backward(&g);
        }
        self.stem.backward(&g);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.stem.params_mut();
        for node in &mut self.nodes {
            out.extend(node.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn state(&self) -> NetworkState {
        NetworkState {
            stem: self.stem.export(),
            nodes: self.nodes.iter().map(Block::export).collect(),
            head: self.head.export(),
        }
    }

    pub fn load_state(&mut self, state: &NetworkState) -> Result<(), NnError> {
        self.load_partial(&PartialState {
            stem: Some(state.stem.clone()),
            nodes: state.nodes.iter().cloned().map(Some).collect(),
            head: Some(state.head.clone()),
        })
    }

    /// Copies every provided layer state over the fresh initialization.
    pub fn load_partial(&mut self, state: &PartialState) -> Result<(), NnError> {
        if let Some(stem) = &state.stem {
            self.stem.import(stem)?;
        }
        if state.nodes.len() > self.nodes.len() {
            return Err(NnError::Shape(format!(
                "state has {} nodes, network has {}",
                state.nodes.len(),
                self.nodes.len()
            )));
        }
        for (node, s) in self.nodes.iter_mut().zip(&state.nodes) {
            if let Some(s) = s {
                node.import(s)?;
            }
        }
        if let Some(head) = &state.head {
            self.head.import(head)?;
        }
        Ok(())
    }

    /// Reseeds the dropout stream so training is reproducible per epoch.
    pub fn reseed_dropout(&mut self, seed: u64) {
        // the head block is fixed: pool, bn, dropout, dense
        let rate = self.spec.dropout;
        self.head.parts[2].1 = Box::new(Dropout::new(rate, seed));
    }
}

fn build_block(
    layer: &LayerSpec,
    shape: &LayerShape,
    rng: &mut ChaCha8Rng,
) -> Result<Block, NnError> {
    let c = shape.in_channels;
    let mut parts: Vec<(&'static str, Box<dyn Layer>)> = Vec::new();
    match layer {
        LayerSpec::Conv {
            kernel,
            batchnorm,
            relu,
        } => {
            check_kernel(*kernel)?;
            parts.push(("conv", Box::new(Conv2d::new(c, c, *kernel, rng))));
            if *batchnorm {
                parts.push(("bn", Box::new(BatchNorm2d::new(c))));
            }
            if *relu {
                parts.push(("relu", Box::new(Relu::new())));
            }
        }
        LayerSpec::SepConv {
            kernel,
            batchnorm,
            relu,
        } => {
            check_kernel(*kernel)?;
            parts.push(("depthwise", Box::new(DepthwiseConv2d::new(c, *kernel, rng))));
            parts.push(("pointwise", Box::new(Conv2d::new(c, c, 1, rng))));
            if *batchnorm {
                parts.push(("bn", Box::new(BatchNorm2d::new(c))));
            }
            if *relu {
                parts.push(("relu", Box::new(Relu::new())));
            }
        }
        LayerSpec::Pool { kind, kernel, .. } => {
            check_kernel(*kernel)?;
            parts.push(("pool", Box::new(Pool2d::new(*kind, *kernel, pool_stride(shape.in_size)))));
            if shape.out_channels != c {
                parts.push(("widen", Box::new(Conv2d::new(c, shape.out_channels, 1, rng))));
            }
        }
        LayerSpec::Identity => {}
    }
    Ok(Block { parts })
}

fn check_kernel(kernel: usize) -> Result<(), NnError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(NnError::Shape(format!("kernel size {kernel} must be odd and positive")));
    }
    Ok(())
}
