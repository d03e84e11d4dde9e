use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Layer;
use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        if train {
            self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut dx = grad_out.clone();
        dx.data_mut()
            .iter_mut()
            .zip(&self.mask)
            .for_each(|(g, &m)| if !m { *g = 0.0 });
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn export(&self, _prefix: &str, _out: &mut Vec<NamedTensor>) {}

    fn import(&mut self, _prefix: &str, _state: &LayerState) -> Result<(), NnError> {
        Ok(())
    }
}

/// Inverted dropout; identity at inference time.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: Vec::new(),
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        if !train || self.rate <= 0.0 {
            self.mask.clear();
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        self.mask = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = x.clone();
        out.data_mut().iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut dx = grad_out.clone();
        if !self.mask.is_empty() {
            dx.data_mut().iter_mut().zip(&self.mask).for_each(|(g, m)| *g *= m);
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn export(&self, _prefix: &str, _out: &mut Vec<NamedTensor>) {}

    fn import(&mut self, _prefix: &str, _state: &LayerState) -> Result<(), NnError> {
        Ok(())
    }
}
