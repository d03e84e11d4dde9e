use rand::Rng;

use super::Layer;
use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

/// Per-channel k×k convolution (stride 1, zero padding k/2, no bias).
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    channels: usize,
    kernel: usize,
    pub weight: Param,
    input: Option<Tensor>,
}

impl DepthwiseConv2d {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            channels,
            kernel,
            weight: Param::he_normal(&[channels, 1, kernel, kernel], kernel * kernel, rng),
            input: None,
        }
    }
}

impl Layer for DepthwiseConv2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.dims();
        assert_eq!(c, self.channels, "depthwise channel mismatch");
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Tensor::zeros(x.dims());
        for i in 0..n {
            let xs = x.sample(i);
            let os = out.sample_mut(i);
            for ch in 0..c {
                let plane = &xs[ch * hw..(ch + 1) * hw];
                let kern = &self.weight.value[ch * k * k..(ch + 1) * k * k];
                let dst = &mut os[ch * hw..(ch + 1) * hw];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(w, dx);
                        let wv = kern[ky * k + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = &plane[sy * w..(sy + 1) * w];
                            let row = &mut dst[y * w..(y + 1) * w];
                            for xo in x0..x1 {
                                row[xo] += wv * src[(xo as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("forward(train) before backward");
        let [n, c, h, w] = x.dims();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut dx = Tensor::zeros(x.dims());
        for i in 0..n {
            let xs = x.sample(i);
            let gs = grad_out.sample(i);
            let dxs = dx.sample_mut(i);
            for ch in 0..c {
                let plane = &xs[ch * hw..(ch + 1) * hw];
                let gplane = &gs[ch * hw..(ch + 1) * hw];
                let dplane = &mut dxs[ch * hw..(ch + 1) * hw];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..k {
                        let dxo = kx as isize - pad;
                        let (x0, x1) = valid_range(w, dxo);
                        let widx = ch * k * k + ky * k + kx;
                        let wv = self.weight.value[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            for xo in x0..x1 {
                                let sx = (xo as isize + dxo) as usize;
                                let g = gplane[y * w + xo];
                                acc += g * plane[sy * w + sx];
                                dplane[sy * w + sx] += g * wv;
                            }
                        }
                        self.weight.grad[widx] += acc;
                    }
                }
            }
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight]
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(self.weight.export(&format!("{prefix}weight")));
    }

    fn import(&mut self, prefix: &str, state: &LayerState) -> Result<(), NnError> {
        self.weight.assign(state.get(&format!("{prefix}weight"))?)
    }
}

/// Output positions `o` in `0..len` for which `o + offset` is a valid input index.
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}
