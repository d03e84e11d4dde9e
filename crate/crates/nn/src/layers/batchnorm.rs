use super::Layer;
use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Batch normalization over (N, H, W) per channel. Also used after global
/// pooling where H = W = 1.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    dims: [usize; 4],
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(&[channels], 1.0, false),
            beta: Param::zeros(&[channels], false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            normalized: Vec::new(),
            inv_std: Vec::new(),
            dims: [0; 4],
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.dims();
        assert_eq!(c, self.channels, "batchnorm channel mismatch");
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut out = Tensor::zeros(x.dims());
        if !train {
            for i in 0..n {
                let xs = x.sample(i);
                let os = out.sample_mut(i);
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var[ch] + EPS).sqrt();
                    let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
                    for j in ch * hw..(ch + 1) * hw {
                        os[j] = g * (xs[j] - m) * inv + b;
                    }
                }
            }
            return out;
        }
        self.dims = x.dims();
        self.normalized.resize(x.len(), 0.0);
        self.inv_std.resize(c, 0.0);
        for ch in 0..c {
            let mut mean = 0.0;
            for i in 0..n {
                mean += x.sample(i)[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for i in 0..n {
                var += x.sample(i)[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= count;
            let inv = 1.0 / (var + EPS).sqrt();
            self.inv_std[ch] = inv;
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            self.running_mean[ch] = (1.0 - MOMENTUM) * self.running_mean[ch] + MOMENTUM * mean;
            self.running_var[ch] = (1.0 - MOMENTUM) * self.running_var[ch] + MOMENTUM * unbiased;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            let sl = c * hw;
            for i in 0..n {
                for j in ch * hw..(ch + 1) * hw {
                    let xn = (x.data()[i * sl + j] - mean) * inv;
                    self.normalized[i * sl + j] = xn;
                    out.data_mut()[i * sl + j] = g * xn + b;
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.dims;
        let hw = h * w;
        let sl = c * hw;
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(self.dims);
        let g = grad_out.data();
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xn = 0.0;
            for i in 0..n {
                for j in ch * hw..(ch + 1) * hw {
                    let idx = i * sl + j;
                    sum_dy += g[idx];
                    sum_dy_xn += g[idx] * self.normalized[idx];
                }
            }
            self.beta.grad[ch] += sum_dy;
            self.gamma.grad[ch] += sum_dy_xn;
            let scale = self.gamma.value[ch] * self.inv_std[ch] / count;
            for i in 0..n {
                for j in ch * hw..(ch + 1) * hw {
                    let idx = i * sl + j;
                    dx.data_mut()[idx] =
                        scale * (count * g[idx] - sum_dy - self.normalized[idx] * sum_dy_xn);
                }
            }
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(self.gamma.export(&format!("{prefix}gamma")));
        out.push(self.beta.export(&format!("{prefix}beta")));
        out.push(NamedTensor {
            name: format!("{prefix}running_mean"),
            shape: vec![self.channels],
            data: self.running_mean.clone(),
        });
        out.push(NamedTensor {
            name: format!("{prefix}running_var"),
            shape: vec![self.channels],
            data: self.running_var.clone(),
        });
    }

    fn import(&mut self, prefix: &str, state: &LayerState) -> Result<(), NnError> {
        self.gamma.assign(state.get(&format!("{prefix}gamma"))?)?;
        self.beta.assign(state.get(&format!("{prefix}beta"))?)?;
        for (name, buf) in [
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ] {
            let t = state.get(&format!("{prefix}{name}"))?;
            if t.data.len() != buf.len() {
                return Err(NnError::Shape(format!("{prefix}{name} length mismatch")));
            }
            buf.copy_from_slice(&t.data);
        }
        Ok(())
    }
}
