use super::Layer;
use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// k×k pooling with padding k/2. Average pooling divides by the number of
/// in-bounds elements only.
#[derive(Debug, Clone)]
pub struct Pool2d {
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    input_dims: [usize; 4],
    // for max: flat input index of the winner; for avg: window element count
    routes: Vec<usize>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize) -> Self {
        Self {
            kind,
            kernel,
            stride: stride.max(1),
            input_dims: [0; 4],
            routes: Vec::new(),
        }
    }

    pub fn output_size(&self, len: usize) -> usize {
        output_size(len, self.kernel, self.stride)
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let pad = (self.kernel / 2) as isize;
        let start = o as isize * self.stride as isize - pad;
        let lo = start.max(0) as usize;
        let hi = ((start + self.kernel as isize).min(len as isize)).max(0) as usize;
        (lo, hi)
    }
}

/// Spatial output size of a padded pooling window.
pub fn output_size(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (len + 2 * pad).saturating_sub(kernel) / stride + 1
}

impl Layer for Pool2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.dims();
        let (oh, ow) = (self.output_size(h), self.output_size(w));
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut routes = Vec::with_capacity(out.len());
        let in_sl = c * h * w;
        let out_sl = c * oh * ow;
        for i in 0..n {
            for ch in 0..c {
                let base = i * in_sl + ch * h * w;
                for oy in 0..oh {
                    let (y0, y1) = self.window(oy, h);
                    for ox in 0..ow {
                        let (x0, x1) = self.window(ox, w);
                        let o = i * out_sl + (ch * oh + oy) * ow + ox;
                        match self.kind {
                            PoolKind::Max => {
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = base + y0 * w + x0;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        let idx = base + y * w + xx;
                                        if x.data()[idx] > best {
                                            best = x.data()[idx];
                                            arg = idx;
                                        }
                                    }
                                }
                                out.data_mut()[o] = best;
                                routes.push(arg);
                            }
                            PoolKind::Avg => {
                                let mut sum = 0.0;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        sum += x.data()[base + y * w + xx];
                                    }
                                }
                                let count = (y1 - y0) * (x1 - x0);
                                out.data_mut()[o] = sum / count as f64;
                                routes.push(count);
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.input_dims = x.dims();
            self.routes = routes;
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_dims;
        let mut dx = Tensor::zeros(self.input_dims);
        match self.kind {
            PoolKind::Max => {
                for (o, &src) in self.routes.iter().enumerate() {
                    dx.data_mut()[src] += grad_out.data()[o];
                }
            }
            PoolKind::Avg => {
                let (oh, ow) = (self.output_size(h), self.output_size(w));
                let in_sl = c * h * w;
                let out_sl = c * oh * ow;
                for i in 0..n {
                    for ch in 0..c {
                        let base = i * in_sl + ch * h * w;
                        for oy in 0..oh {
                            let (y0, y1) = self.window(oy, h);
                            for ox in 0..ow {
                                let (x0, x1) = self.window(ox, w);
                                let o = i * out_sl + (ch * oh + oy) * ow + ox;
                                let g = grad_out.data()[o] / self.routes[o] as f64;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        dx.data_mut()[base + y * w + xx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
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

/// Adaptive global concatenation pooling: (N, C, H, W) -> (N, 2C, 1, 1) with
/// the channel means followed by the channel maxima.
#[derive(Debug, Clone, Default)]
pub struct GlobalConcatPool {
    input_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl GlobalConcatPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalConcatPool {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let mut out = Tensor::zeros([n, 2 * c, 1, 1]);
        let mut argmax = Vec::with_capacity(n * c);
        for i in 0..n {
            let xs = x.sample(i);
            for ch in 0..c {
                let plane = &xs[ch * hw..(ch + 1) * hw];
                let mean = plane.iter().sum::<f64>() / hw as f64;
                let (arg, max) = plane
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                let os = out.sample_mut(i);
                os[ch] = mean;
                os[c + ch] = max;
                argmax.push(arg);
            }
        }
        if train {
            self.input_dims = x.dims();
            self.argmax = argmax;
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_dims;
        let hw = h * w;
        let mut dx = Tensor::zeros(self.input_dims);
        for i in 0..n {
            let g = grad_out.sample(i).to_vec();
            let ds = dx.sample_mut(i);
            for ch in 0..c {
                let gm = g[ch] / hw as f64;
                ds[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v += gm);
                ds[ch * hw + self.argmax[i * c + ch]] += g[c + ch];
            }
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
