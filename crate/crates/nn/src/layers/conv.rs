use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::Layer;
use crate::param::{LayerState, NamedTensor, Param};
use crate::tensor::Tensor;
use crate::NnError;

/// Stride-1 "same" convolution with bias, computed by im2col + gemm.
///
/// With `kernel == 1` and a 1×1 input this is a fully connected layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    pub weight: Param,
    pub bias: Param,
    cols: Vec<Vec<f64>>,
    input_dims: [usize; 4],
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Param::zeros(&[out_channels], false),
            cols: Vec::new(),
            input_dims: [0; 4],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds one C×H×W sample into a (C·k·k) × (H·W) matrix with zero padding k/2.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, v) in out_row.iter_mut().enumerate() {
                        let sx = x_out as isize + dx;
                        *v = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a C×H×W gradient.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = ch * hw + sy as usize * w;
                    for x_out in 0..w {
                        let sx = x_out as isize + dxo;
                        if sx >= 0 && sx < w as isize {
                            dx[base + sx as usize] += src[y * w + x_out];
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.dims();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let hw = h * w;
        let pl = self.patch_len();
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let weight = ArrayView2::from_shape((self.out_channels, pl), &self.weight.value)
            .expect("weight shape");
        self.input_dims = x.dims();
        if train {
            self.cols.resize_with(n, Vec::new);
        }
        let mut scratch = Vec::new();
        for i in 0..n {
            let cols: &[f64] = if self.kernel == 1 {
                x.sample(i)
            } else {
                let buf = if train { &mut self.cols[i] } else { &mut scratch };
                buf.resize(pl * hw, 0.0);
                im2col(x.sample(i), c, h, w, self.kernel, buf);
                buf
            };
            let cols_view = ArrayView2::from_shape((pl, hw), cols).expect("cols shape");
            let out_sample = out.sample_mut(i);
            for (o, chunk) in out_sample.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            let mut out_view =
                ArrayViewMut2::from_shape((self.out_channels, hw), out_sample).expect("out shape");
            general_mat_mul(1.0, &weight, &cols_view, 1.0, &mut out_view);
        }
        if train && self.kernel == 1 {
            // keep the input itself as the column matrix
            self.cols.iter_mut().enumerate().for_each(|(i, buf)| {
                buf.clear();
                buf.extend_from_slice(x.sample(i));
            });
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_dims;
        let hw = h * w;
        let pl = self.patch_len();
        let mut dx = Tensor::zeros(self.input_dims);
        let weight = ArrayView2::from_shape((self.out_channels, pl), &self.weight.value)
            .expect("weight shape");
        let mut dcols = vec![0.0; pl * hw];
        for i in 0..n {
            let g = grad_out.sample(i);
            for (o, chunk) in g.chunks(hw).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f64>();
            }
            let g_view = ArrayView2::from_shape((self.out_channels, hw), g).expect("grad shape");
            let cols_view =
                ArrayView2::from_shape((pl, hw), &self.cols[i][..]).expect("cols shape");
            let mut dw = ArrayViewMut2::from_shape((self.out_channels, pl), &mut self.weight.grad)
                .expect("dw shape");
            general_mat_mul(1.0, &g_view, &cols_view.t(), 1.0, &mut dw);
            if self.kernel == 1 {
                let mut dx_view =
                    ArrayViewMut2::from_shape((pl, hw), dx.sample_mut(i)).expect("dx shape");
                general_mat_mul(1.0, &weight.t(), &g_view, 0.0, &mut dx_view);
            } else {
                let mut dcols_view =
                    ArrayViewMut2::from_shape((pl, hw), &mut dcols[..]).expect("dcols shape");
                general_mat_mul(1.0, &weight.t(), &g_view, 0.0, &mut dcols_view);
                col2im(&dcols, c, h, w, self.kernel, dx.sample_mut(i));
            }
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(self.weight.export(&format!("{prefix}weight")));
        out.push(self.bias.export(&format!("{prefix}bias")));
    }

    fn import(&mut self, prefix: &str, state: &LayerState) -> Result<(), NnError> {
        self.weight.assign(state.get(&format!("{prefix}weight"))?)?;
        self.bias.assign(state.get(&format!("{prefix}bias"))?)?;
        Ok(())
    }
}
