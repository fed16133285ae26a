use rand::Rng;

use super::{he_uniform, Tensor};
use crate::error::{ensure, Result};

/// 2-D cross-correlation over `[C, H, W]` inputs with `[out, in, k, k]` kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Output columns `ox` whose input column `ox * stride + k - pad` lies in `[0, n)`.
#[inline]
fn valid_range(n: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n + pad <= k {
        0
    } else {
        ((n + pad - k - 1) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            weight: he_uniform(
                rng,
                &[out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
            ),
            bias: Tensor::zeros(&[out_channels]),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        ensure!(
            height + 2 * self.padding >= k && width + 2 * self.padding >= k,
            Shape,
            "{k}x{k} kernel does not fit {height}x{width} input padded by {}",
            self.padding
        );
        Ok((
            (height + 2 * self.padding - k) / self.stride + 1,
            (width + 2 * self.padding - k) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
        ensure!(
            x.shape().len() == 3 && x.shape()[0] == self.in_channels(),
            Shape,
            "conv expects [{}, H, W], got {:?}",
            self.in_channels(),
            x.shape()
        );
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.output_dims(h, w)?;
        Ok((h, w, oh, ow))
    }

    /// Unfolds `x` into a `[in * k * k, oh * ow]` patch matrix.
    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let (cin, k, s, pad) = (self.in_channels(), self.kernel(), self.stride, self.padding);
        let n = oh * ow;
        let mut col = vec![0.0; cin * k * k * n];
        for ic in 0..cin {
            let plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, ky, s, pad);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(w, ow, kx, s, pad);
                    let row = &mut col[((ic * k + ky) * k + kx) * n..][..n];
                    for oy in oy_lo..oy_hi {
                        let src = &plane[(oy * s + ky - pad) * w..][..w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let x0 = ox_lo + kx - pad;
                            dst[ox_lo..ox_hi].copy_from_slice(&src[x0..x0 + ox_hi - ox_lo]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] = src[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Conv2d::im2col`]: scatters patch gradients back onto the input.
    fn col2im(&self, col: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let (cin, k, s, pad) = (self.in_channels(), self.kernel(), self.stride, self.padding);
        let n = oh * ow;
        let mut x = vec![0.0; cin * h * w];
        for ic in 0..cin {
            let plane = &mut x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, ky, s, pad);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(w, ow, kx, s, pad);
                    let row = &col[((ic * k + ky) * k + kx) * n..][..n];
                    for oy in oy_lo..oy_hi {
                        let dst = &mut plane[(oy * s + ky - pad) * w..][..w];
                        let src = &row[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let x0 = ox_lo + kx - pad;
                            for (d, v) in dst[x0..].iter_mut().zip(&src[ox_lo..ox_hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox * s + kx - pad] += src[ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w, oh, ow) = self.check_input(x)?;
        let cout = self.out_channels();
        let n = oh * ow;
        let col = self.im2col(x.data(), h, w, oh, ow);
        let rows = col.len() / n;
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        for (o, &b) in out.data_mut().chunks_exact_mut(n).zip(self.bias.data()) {
            o.fill(b);
        }
        // out[cout, n] += W[cout, rows] * col[rows, n]
        gemm(cout, rows, n, self.weight.data(), (rows, 1), &col, (n, 1), 1.0, out.data_mut());
        Ok(out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` only when requested.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        input_grad: bool,
    ) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let (h, w, oh, ow) = self.check_input(x)?;
        let cout = self.out_channels();
        ensure!(
            grad_out.shape() == [cout, oh, ow],
            Shape,
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [cout, oh, ow]
        );
        let n = oh * ow;
        let col = self.im2col(x.data(), h, w, oh, ow);
        let rows = col.len() / n;
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(&[cout]);
        for (b, g) in gb.data_mut().iter_mut().zip(grad_out.data().chunks_exact(n)) {
            *b = g.iter().sum();
        }
        // gw[cout, rows] = grad[cout, n] * col^T
        gemm(cout, n, rows, grad_out.data(), (n, 1), &col, (1, n), 0.0, gw.data_mut());
        let gx = if input_grad {
            // dcol[rows, n] = W^T * grad
            let mut dcol = vec![0.0; col.len()];
            gemm(rows, cout, n, self.weight.data(), (1, rows), grad_out.data(), (n, 1), 0.0, &mut dcol);
            Some(Tensor::from_vec(x.shape(), self.col2im(&dcol, h, w, oh, ow))?)
        } else {
            None
        };
        Ok((gx, gw, gb))
    }
}

/// `c[m, n] = a[m, k] * b[k, n] + beta * c`, with `(row, col)` strides for `a` and `b`; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides address only entries inside the length-checked buffers.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), sa.0 as isize, sa.1 as isize,
            b.as_ptr(), sb.0 as isize, sb.1 as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub fn relu(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` by the post-activation values `y` of a ReLU.
pub fn relu_backward(y: &[f64], grad: &mut [f64]) {
    for (g, v) in grad.iter_mut().zip(y) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping max pooling; trailing rows / columns that do not fill a window are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.size, width / self.size)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        ensure!(x.shape().len() == 3, Shape, "pool expects [C, H, W], got {:?}", x.shape());
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.output_dims(h, w);
        ensure!(oh > 0 && ow > 0, Shape, "{h}x{w} input too small for {0}x{0} pooling", self.size);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut argmax = vec![0; c * oh * ow];
        let xd = x.data();
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..self.size {
                        for dx in 0..self.size {
                            let i = ch * h * w + (oy * self.size + dy) * w + ox * self.size + dx;
                            if xd[i] > best {
                                best = xd[i];
                                at = i;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = at;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Tensor {
        let mut gx = Tensor::zeros(&cache.input_shape);
        for (g, &i) in grad_out.data().iter().zip(&cache.argmax) {
            gx.data_mut()[i] += g;
        }
        gx
    }
}

/// Fully connected layer `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: he_uniform(rng, &[outputs, inputs], inputs),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.inputs(),
            Shape,
            "dense expects {} inputs, got {}",
            self.inputs(),
            x.len()
        );
        let n = self.inputs();
        Ok(self
            .weight
            .data()
            .chunks_exact(n)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    /// Accumulates parameter gradients into `(gw, gb)` and returns the input gradient.
    pub fn backward_into(&self, x: &[f64], grad_out: &[f64], gw: &mut Tensor, gb: &mut Tensor) -> Vec<f64> {
        let n = self.inputs();
        let mut gx = vec![0.0; n];
        for (o, &g) in grad_out.iter().enumerate() {
            gb.data_mut()[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight.data()[o * n..(o + 1) * n];
            for (gxi, w) in gx.iter_mut().zip(row) {
                *gxi += g * w;
            }
            for (gwi, v) in gw.data_mut()[o * n..(o + 1) * n].iter_mut().zip(x) {
                *gwi += g * v;
            }
        }
        gx
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> (Vec<f64>, Tensor, Tensor) {
        let mut gw = Tensor::zeros_like(&self.weight);
        let mut gb = Tensor::zeros_like(&self.bias);
        let gx = self.backward_into(x, grad_out, &mut gw, &mut gb);
        (gx, gw, gb)
    }
}
