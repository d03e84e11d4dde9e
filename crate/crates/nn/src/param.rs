use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::NnError;

/// A trainable parameter together with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    /// Whether L2 weight decay applies (weights yes, biases and norm affine no).
    pub decay: bool,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize], decay: bool) -> Self {
        Self::filled(shape, 0.0, decay)
    }

    pub fn filled(shape: &[usize], value: f64, decay: bool) -> Self {
        let len = shape.iter().product();
        Self {
            value: vec![value; len],
            grad: vec![0.0; len],
            shape: shape.to_vec(),
            decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// He (fan-in) initialization: N(0, 2 / fan_in).
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape, true);
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = normal.sample(rng);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replaces the value, clearing optimizer moments.
    pub fn assign(&mut self, tensor: &NamedTensor) -> Result<(), NnError> {
        if tensor.shape != self.shape || tensor.data.len() != self.value.len() {
            return Err(NnError::Shape(format!(
                "cannot load `{}` of shape {:?} into parameter of shape {:?}",
                tensor.name, tensor.shape, self.shape
            )));
        }
        self.value.copy_from_slice(&tensor.data);
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        Ok(())
    }

    pub fn export(&self, name: &str) -> NamedTensor {
        NamedTensor {
            name: name.to_string(),
            shape: self.shape.clone(),
            data: self.value.clone(),
        }
    }
}

/// A serializable snapshot of one parameter or buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All tensors belonging to one layer (stem, hidden node or head).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub tensors: Vec<NamedTensor>,
}

impl LayerState {
    pub fn get(&self, name: &str) -> Result<&NamedTensor, NnError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect()
    }
}
