//! Layers over a flat parameter vector.
//!
//! Each layer records offsets into the owning network's parameter (and
//! buffer) vectors. Forward passes borrow parameters immutably and return a
//! cache; backward passes accumulate into a gradient vector laid out like the
//! parameters.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::tensor::{col2im, gemm, im2col, Tensor, Window};
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Allocates parameter ranges while a network is being assembled.
#[derive(Debug, Default)]
pub struct Layout {
    pub params: usize,
    pub buffers: usize,
}

impl Layout {
    fn take(&mut self, n: usize) -> usize {
        let off = self.params;
        self.params += n;
        off
    }
    fn take_buffer(&mut self, n: usize) -> usize {
        let off = self.buffers;
        self.buffers += n;
        off
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    win: Window,
    w_off: usize,
    b_off: usize,
}

pub struct ConvCache {
    cols: Vec<Vec<f64>>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new(layout: &mut Layout, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let w_off = layout.take(cout * cin * k * k);
        let b_off = layout.take(cout);
        Conv2d {
            cin,
            cout,
            win: Window { k, stride, pad },
            w_off,
            b_off,
        }
    }

    fn w_len(&self) -> usize {
        self.cout * self.cin * self.win.k * self.win.k
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let normal = Normal::new(0.0, 0.02).unwrap();
        for v in &mut params[self.w_off..self.w_off + self.w_len()] {
            *v = normal.sample(rng);
        }
        params[self.b_off..self.b_off + self.cout].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c(), self.cin, "conv input channels");
        let (oh, ow) = (self.win.out_len(x.h()), self.win.out_len(x.w()));
        let kk = self.cin * self.win.k * self.win.k;
        let weight = &params[self.w_off..self.w_off + self.w_len()];
        let bias = &params[self.b_off..self.b_off + self.cout];
        let mut out = Tensor::zeros([x.n(), self.cout, oh, ow]);
        let mut cache = Vec::with_capacity(x.n());
        for i in 0..x.n() {
            let cols = im2col(x.sample(i), self.cin, x.h(), x.w(), self.win);
            let dst = out.sample_mut(i);
            for (co, b) in bias.iter().enumerate() {
                dst[co * oh * ow..(co + 1) * oh * ow].fill(*b);
            }
            gemm(self.cout, kk, oh * ow, weight, false, &cols, false, dst, 1.0);
            cache.push(cols);
        }
        (
            out,
            ConvCache {
                cols: cache,
                in_shape: x.shape,
            },
        )
    }

    pub fn backward(&self, params: &[f64], cache: &ConvCache, dy: &Tensor, grads: &mut [f64]) -> Tensor {
        let [n, _, h, w] = cache.in_shape;
        let (oh, ow) = (dy.h(), dy.w());
        let kk = self.cin * self.win.k * self.win.k;
        let weight = &params[self.w_off..self.w_off + self.w_len()];
        let mut dx = Tensor::zeros(cache.in_shape);
        let mut dcols = vec![0.0; kk * oh * ow];
        for i in 0..n {
            let g = dy.sample(i);
            {
                let dw = &mut grads[self.w_off..self.w_off + self.w_len()];
                gemm(self.cout, oh * ow, kk, g, false, &cache.cols[i], true, dw, 1.0);
            }
            let db = &mut grads[self.b_off..self.b_off + self.cout];
            for (co, d) in db.iter_mut().enumerate() {
                *d += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
            }
            gemm(kk, self.cout, oh * ow, weight, true, g, false, &mut dcols, 0.0);
            col2im(&dcols, self.cin, h, w, self.win, dx.sample_mut(i));
        }
        dx
    }
}

/// Fractionally strided convolution; weights stored `(cin, cout, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub cin: usize,
    pub cout: usize,
    win: Window,
    w_off: usize,
    b_off: usize,
}

pub struct ConvTCache {
    input: Tensor,
}

impl ConvTranspose2d {
    pub fn new(layout: &mut Layout, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let w_off = layout.take(cin * cout * k * k);
        let b_off = layout.take(cout);
        ConvTranspose2d {
            cin,
            cout,
            win: Window { k, stride, pad },
            w_off,
            b_off,
        }
    }

    fn w_len(&self) -> usize {
        self.cout * self.cin * self.win.k * self.win.k
    }

    fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.win.stride + self.win.k - 2 * self.win.pad
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let normal = Normal::new(0.0, 0.02).unwrap();
        for v in &mut params[self.w_off..self.w_off + self.w_len()] {
            *v = normal.sample(rng);
        }
        params[self.b_off..self.b_off + self.cout].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> (Tensor, ConvTCache) {
        assert_eq!(x.c(), self.cin, "conv-transpose input channels");
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let kk = self.cout * self.win.k * self.win.k;
        let weight = &params[self.w_off..self.w_off + self.w_len()];
        let bias = &params[self.b_off..self.b_off + self.cout];
        let mut out = Tensor::zeros([x.n(), self.cout, oh, ow]);
        let mut cols = vec![0.0; kk * h * w];
        for i in 0..x.n() {
            gemm(kk, self.cin, h * w, weight, true, x.sample(i), false, &mut cols, 0.0);
            let dst = out.sample_mut(i);
            col2im(&cols, self.cout, oh, ow, self.win, dst);
            for (co, b) in bias.iter().enumerate() {
                for v in &mut dst[co * oh * ow..(co + 1) * oh * ow] {
                    *v += b;
                }
            }
        }
        (out, ConvTCache { input: x.clone() })
    }

    pub fn backward(&self, params: &[f64], cache: &ConvTCache, dy: &Tensor, grads: &mut [f64]) -> Tensor {
        let x = &cache.input;
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (dy.h(), dy.w());
        let kk = self.cout * self.win.k * self.win.k;
        let weight = &params[self.w_off..self.w_off + self.w_len()];
        let mut dx = Tensor::zeros(x.shape);
        for i in 0..x.n() {
            let g = dy.sample(i);
            let dcols = im2col(g, self.cout, oh, ow, self.win);
            gemm(self.cin, kk, h * w, weight, false, &dcols, false, dx.sample_mut(i), 0.0);
            {
                let dw = &mut grads[self.w_off..self.w_off + self.w_len()];
                gemm(self.cin, h * w, kk, x.sample(i), false, &dcols, true, dw, 1.0);
            }
            let db = &mut grads[self.b_off..self.b_off + self.cout];
            for (co, d) in db.iter_mut().enumerate() {
                *d += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
            }
        }
        dx
    }
}

/// Per-channel batch normalization with affine parameters and running
/// statistics. Running statistics live in the network's buffer vector
/// (mean block followed by variance block).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    gamma_off: usize,
    beta_off: usize,
    buf_off: usize,
}

pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
    /// Batch mean and unbiased variance, for the running-statistics update.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(layout: &mut Layout, channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma_off: layout.take(channels),
            beta_off: layout.take(channels),
            buf_off: layout.take_buffer(2 * channels),
        }
    }

    pub fn init(&self, params: &mut [f64], buffers: &mut [f64], rng: &mut Rng) {
        let normal = Normal::new(1.0, 0.02).unwrap();
        for v in &mut params[self.gamma_off..self.gamma_off + self.channels] {
            *v = normal.sample(rng);
        }
        params[self.beta_off..self.beta_off + self.channels].fill(0.0);
        buffers[self.buf_off..self.buf_off + self.channels].fill(0.0);
        buffers[self.buf_off + self.channels..self.buf_off + 2 * self.channels].fill(1.0);
    }

    pub fn forward(&self, params: &[f64], buffers: &[f64], x: &Tensor, train: bool) -> (Tensor, BnCache) {
        let c = self.channels;
        assert_eq!(x.c(), c, "batchnorm channels");
        let plane = x.h() * x.w();
        let count = (x.n() * plane) as f64;
        let gamma = &params[self.gamma_off..self.gamma_off + c];
        let beta = &params[self.beta_off..self.beta_off + c];
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut unbiased = vec![0.0; c];
        if train {
            for i in 0..x.n() {
                let s = x.sample(i);
                for ch in 0..c {
                    mean[ch] += s[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                }
            }
            for m in &mut mean {
                *m /= count;
            }
            for i in 0..x.n() {
                let s = x.sample(i);
                for ch in 0..c {
                    var[ch] += s[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            for ch in 0..c {
                unbiased[ch] = if count > 1.0 { var[ch] / (count - 1.0) } else { 0.0 };
                var[ch] /= count;
            }
        } else {
            mean.copy_from_slice(&buffers[self.buf_off..self.buf_off + c]);
            var.copy_from_slice(&buffers[self.buf_off + c..self.buf_off + 2 * c]);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape);
        let mut out = Tensor::zeros(x.shape);
        for i in 0..x.n() {
            let s = x.sample(i);
            let xh = xhat.sample_mut(i);
            for ch in 0..c {
                for p in ch * plane..(ch + 1) * plane {
                    xh[p] = (s[p] - mean[ch]) * inv_std[ch];
                }
            }
            let o = out.sample_mut(i);
            let xh = xhat.sample(i);
            for ch in 0..c {
                for p in ch * plane..(ch + 1) * plane {
                    o[p] = gamma[ch] * xh[p] + beta[ch];
                }
            }
        }
        (
            out,
            BnCache {
                xhat,
                inv_std,
                train,
                batch_mean: mean,
                batch_var: unbiased,
            },
        )
    }

    pub fn backward(&self, params: &[f64], cache: &BnCache, dy: &Tensor, grads: &mut [f64]) -> Tensor {
        let c = self.channels;
        let plane = dy.h() * dy.w();
        let count = (dy.n() * plane) as f64;
        let gamma = &params[self.gamma_off..self.gamma_off + c];
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..dy.n() {
            let g = dy.sample(i);
            let xh = cache.xhat.sample(i);
            for ch in 0..c {
                for p in ch * plane..(ch + 1) * plane {
                    sum_dy[ch] += g[p];
                    sum_dy_xhat[ch] += g[p] * xh[p];
                }
            }
        }
        for ch in 0..c {
            grads[self.gamma_off + ch] += sum_dy_xhat[ch];
            grads[self.beta_off + ch] += sum_dy[ch];
        }
        let mut dx = Tensor::zeros(dy.shape);
        for i in 0..dy.n() {
            let g = dy.sample(i);
            let xh = cache.xhat.sample(i);
            let d = dx.sample_mut(i);
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                for p in ch * plane..(ch + 1) * plane {
                    d[p] = if cache.train {
                        scale * (g[p] - sum_dy[ch] / count - xh[p] * sum_dy_xhat[ch] / count)
                    } else {
                        scale * g[p]
                    };
                }
            }
        }
        dx
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates.
    pub fn update_running(&self, buffers: &mut [f64], cache: &BnCache) {
        let c = self.channels;
        for ch in 0..c {
            let m = &mut buffers[self.buf_off + ch];
            *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * cache.batch_mean[ch];
            let v = &mut buffers[self.buf_off + c + ch];
            *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * cache.batch_var[ch];
        }
    }
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect(),
    }
}

pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
            .collect(),
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

pub fn tanh(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|v| v.tanh()).collect(),
    }
}

/// Gradient through `y = tanh(x)`, given the output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: y.shape,
        data: y.data.iter().zip(&dy.data).map(|(&v, &g)| g * (1.0 - v * v)).collect(),
    }
}

/// Inverted dropout mask with keep probability `1 - p`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - p;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub fn apply_mask(x: &Tensor, mask: &[f64]) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().zip(mask).map(|(v, m)| v * m).collect(),
    }
}

/// Mean binary cross-entropy on logits against a constant target, and its
/// gradient with respect to the logits.
pub fn bce_with_logits(logits: &Tensor, target: f64) -> (f64, Tensor) {
    let n = logits.data.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape);
    for (g, &z) in grad.data.iter_mut().zip(&logits.data) {
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) - target * z + (-z.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-z).exp());
        *g = (sig - target) / n;
    }
    (loss / n, grad)
}
