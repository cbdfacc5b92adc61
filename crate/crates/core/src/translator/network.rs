//! Encoder-decoder generator with skip connections and a patch
//! discriminator, both built from Conv → BatchNorm → (Leaky)ReLU blocks.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::ImageShape;
use crate::nn::{
    apply_mask, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward,
    BatchNorm2d, BnCache, Conv2d, ConvCache, ConvTCache, ConvTranspose2d, Layout, Tensor,
};
use crate::rng::Rng;

pub const DROPOUT_P: f64 = 0.5;

/// Network sizes. Stored in checkpoints so that parameter vectors can be
/// re-bound to layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub image: ImageShape,
    /// Number of stride-2 levels in the generator.
    pub depth: usize,
    pub base_channels: usize,
    pub disc_channels: usize,
    /// Number of stride-2 convolutions in the discriminator.
    pub disc_layers: usize,
    pub noise_channel: bool,
    pub dropout: bool,
}

impl Architecture {
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels * (1 << level.min(2))
    }
}

/// Per-forward stochastic inputs of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub seed: u64,
    /// One inverted-dropout mask per decoder level that uses dropout.
    pub dropout_masks: Vec<Option<Vec<f64>>>,
    /// Standard-normal input channel, when enabled.
    pub channel: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub arch: Architecture,
    enc: Vec<Conv2d>,
    enc_bn: Vec<Option<BatchNorm2d>>,
    dec: Vec<ConvTranspose2d>,
    dec_bn: Vec<Option<BatchNorm2d>>,
    dec_dropout: Vec<bool>,
    pub n_params: usize,
    pub n_buffers: usize,
}

pub struct GenCache {
    enc_conv: Vec<ConvCache>,
    enc_bn: Vec<Option<BnCache>>,
    /// Encoder outputs (pre-activation), one per level.
    enc_out: Vec<Tensor>,
    dec_conv: Vec<Option<ConvTCache>>,
    dec_bn: Vec<Option<BnCache>>,
    /// Input to each decoder level before its ReLU.
    dec_in: Vec<Option<Tensor>>,
    out: Tensor,
    in_channels: usize,
}

pub(crate) fn signs_of(t: &Tensor, out: &mut Vec<i8>) {
    out.extend(t.data.iter().map(|v| v.partial_cmp(&0.0).map_or(0, |o| o as i8)));
}

impl GenCache {
    /// Signs of every input to a piecewise-linear activation.
    pub fn activation_signs(&self, out: &mut Vec<i8>) {
        let d = self.enc_out.len();
        for t in &self.enc_out[..d - 1] {
            signs_of(t, out);
        }
        for t in self.dec_in.iter().flatten() {
            signs_of(t, out);
        }
    }

    pub fn bn_caches(&self) -> impl Iterator<Item = &BnCache> {
        self.enc_bn.iter().chain(&self.dec_bn).flatten()
    }
}

impl Generator {
    pub fn new(arch: Architecture) -> Self {
        let d = arch.depth;
        assert!(d >= 1, "generator depth");
        let mut layout = Layout::default();
        let cin = arch.image.channels + arch.noise_channel as usize;
        let mut enc = Vec::with_capacity(d);
        let mut enc_bn = Vec::with_capacity(d);
        for i in 0..d {
            let input = if i == 0 { cin } else { arch.channels_at(i - 1) };
            enc.push(Conv2d::new(&mut layout, input, arch.channels_at(i), 4, 2, 1));
            let bn = (i > 0 && i < d - 1).then(|| BatchNorm2d::new(&mut layout, arch.channels_at(i)));
            enc_bn.push(bn);
        }
        let mut dec = Vec::with_capacity(d);
        let mut dec_bn = Vec::with_capacity(d);
        let mut dec_dropout = Vec::with_capacity(d);
        for j in 0..d {
            let input = if j == d - 1 {
                arch.channels_at(d - 1)
            } else {
                2 * arch.channels_at(j)
            };
            let output = if j == 0 { arch.image.channels } else { arch.channels_at(j - 1) };
            dec.push(ConvTranspose2d::new(&mut layout, input, output, 4, 2, 1));
            dec_bn.push((j > 0).then(|| BatchNorm2d::new(&mut layout, output)));
            dec_dropout.push(arch.dropout && j > 0 && j + 2 >= d);
        }
        Generator {
            arch,
            enc,
            enc_bn,
            dec,
            dec_bn,
            dec_dropout,
            n_params: layout.params,
            n_buffers: layout.buffers,
        }
    }

    pub fn init(&self, params: &mut [f64], buffers: &mut [f64], rng: &mut Rng) {
        for (conv, bn) in self.enc.iter().zip(&self.enc_bn) {
            conv.init(params, rng);
            if let Some(bn) = bn {
                bn.init(params, buffers, rng);
            }
        }
        for (conv, bn) in self.dec.iter().zip(&self.dec_bn) {
            conv.init(params, rng);
            if let Some(bn) = bn {
                bn.init(params, buffers, rng);
            }
        }
    }

    pub fn draw_noise(&self, batch: usize, seed: u64, rng: &mut Rng) -> NoiseDraw {
        let shape = self.arch.image;
        let dropout_masks = (0..self.arch.depth)
            .map(|j| {
                self.dec_dropout[j].then(|| {
                    let side_h = shape.height >> j;
                    let side_w = shape.width >> j;
                    dropout_mask(batch * self.dec[j].cout * side_h * side_w, DROPOUT_P, rng)
                })
            })
            .collect();
        let channel = self.arch.noise_channel.then(|| {
            let normal = Normal::new(0.0, 1.0).unwrap();
            (0..batch * shape.plane()).map(|_| normal.sample(rng)).collect()
        });
        NoiseDraw {
            seed,
            dropout_masks,
            channel,
        }
    }

    pub fn forward(&self, params: &[f64], buffers: &[f64], x: &Tensor, train: bool, noise: &NoiseDraw) -> GenCache {
        let d = self.arch.depth;
        let input = match &noise.channel {
            Some(z) => Tensor::concat_channels(x, &Tensor::from_vec([x.n(), 1, x.h(), x.w()], z.clone())),
            None => x.clone(),
        };
        let mut enc_conv = Vec::with_capacity(d);
        let mut enc_bn = Vec::with_capacity(d);
        let mut enc_out: Vec<Tensor> = Vec::with_capacity(d);
        for i in 0..d {
            let a = if i == 0 { input.clone() } else { leaky_relu(&enc_out[i - 1]) };
            let (mut t, cc) = self.enc[i].forward(params, &a);
            enc_conv.push(cc);
            let bc = self.enc_bn[i].as_ref().map(|bn| {
                let (y, c) = bn.forward(params, buffers, &t, train);
                t = y;
                c
            });
            enc_bn.push(bc);
            enc_out.push(t);
        }
        let mut dec_conv: Vec<Option<ConvTCache>> = (0..d).map(|_| None).collect();
        let mut dec_bn: Vec<Option<BnCache>> = (0..d).map(|_| None).collect();
        let mut dec_in: Vec<Option<Tensor>> = (0..d).map(|_| None).collect();
        let mut u = enc_out[d - 1].clone();
        let mut out = None;
        for j in (0..d).rev() {
            let r = relu(&u);
            let (mut t, ct) = self.dec[j].forward(params, &r);
            dec_conv[j] = Some(ct);
            dec_in[j] = Some(u);
            if j == 0 {
                out = Some(tanh(&t));
                break;
            }
            if let Some(bn) = &self.dec_bn[j] {
                let (y, c) = bn.forward(params, buffers, &t, train);
                dec_bn[j] = Some(c);
                t = y;
            }
            if let Some(mask) = &noise.dropout_masks[j] {
                t = apply_mask(&t, mask);
            }
            u = Tensor::concat_channels(&t, &enc_out[j - 1]);
        }
        GenCache {
            enc_conv,
            enc_bn,
            enc_out,
            dec_conv,
            dec_bn,
            dec_in,
            out: out.expect("decoder ran"),
            in_channels: input.c(),
        }
    }

    /// Accumulates parameter gradients of `<d_out, G(x)>` into `grads`.
    pub fn backward(&self, params: &[f64], cache: &GenCache, noise: &NoiseDraw, d_out: &Tensor, grads: &mut [f64]) {
        let d = self.arch.depth;
        let mut d_enc: Vec<Option<Tensor>> = (0..d).map(|_| None).collect();
        let add = |slot: &mut Option<Tensor>, g: Tensor| match slot {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        };
        let mut g = tanh_backward(&cache.out, d_out);
        for j in 0..d {
            let dr = self.dec[j].backward(params, cache.dec_conv[j].as_ref().unwrap(), &g, grads);
            let u = cache.dec_in[j].as_ref().unwrap();
            let du = relu_backward(u, &dr);
            if j == d - 1 {
                add(&mut d_enc[d - 1], du);
                break;
            }
            let skip_c = cache.enc_out[j].c();
            let (dt, dskip) = du.split_channels(du.c() - skip_c);
            add(&mut d_enc[j], dskip);
            // back through dropout and batchnorm of level j + 1
            let mut dt = dt;
            if let Some(mask) = &noise.dropout_masks[j + 1] {
                dt = apply_mask(&dt, mask);
            }
            if let Some(bn) = &self.dec_bn[j + 1] {
                dt = bn.backward(params, cache.dec_bn[j + 1].as_ref().unwrap(), &dt, grads);
            }
            g = dt;
        }
        for i in (0..d).rev() {
            let mut de = d_enc[i].take().expect("encoder gradient");
            if let Some(bn) = &self.enc_bn[i] {
                de = bn.backward(params, cache.enc_bn[i].as_ref().unwrap(), &de, grads);
            }
            let din = self.enc[i].backward(params, &cache.enc_conv[i], &de, grads);
            if i > 0 {
                let dprev = leaky_relu_backward(&cache.enc_out[i - 1], &din);
                add(&mut d_enc[i - 1], dprev);
            }
        }
        debug_assert!(cache.in_channels > 0);
    }

    pub fn output(cache: &GenCache) -> &Tensor {
        &cache.out
    }

    pub fn update_running(&self, buffers: &mut [f64], cache: &GenCache) {
        for (bn, c) in self.enc_bn.iter().zip(&cache.enc_bn) {
            if let (Some(bn), Some(c)) = (bn, c) {
                bn.update_running(buffers, c);
            }
        }
        for (bn, c) in self.dec_bn.iter().zip(&cache.dec_bn) {
            if let (Some(bn), Some(c)) = (bn, c) {
                bn.update_running(buffers, c);
            }
        }
    }
}

/// Patch discriminator over the channel-concatenation of source and
/// candidate target. Emits one logit per receptive-field patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub arch: Architecture,
    convs: Vec<Conv2d>,
    bns: Vec<Option<BatchNorm2d>>,
    head: Conv2d,
    pub n_params: usize,
    pub n_buffers: usize,
}

pub struct DiscCache {
    convs: Vec<ConvCache>,
    bns: Vec<Option<BnCache>>,
    /// Pre-activation output of each stride-2 block.
    pre: Vec<Tensor>,
    head: ConvCache,
    source_channels: usize,
}

impl DiscCache {
    pub fn activation_signs(&self, out: &mut Vec<i8>) {
        for t in &self.pre {
            signs_of(t, out);
        }
    }
}

impl Discriminator {
    pub fn new(arch: Architecture) -> Self {
        let mut layout = Layout::default();
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut cin = 2 * arch.image.channels;
        for i in 0..arch.disc_layers {
            let cout = arch.disc_channels << i;
            convs.push(Conv2d::new(&mut layout, cin, cout, 4, 2, 1));
            bns.push((i > 0).then(|| BatchNorm2d::new(&mut layout, cout)));
            cin = cout;
        }
        let head = Conv2d::new(&mut layout, cin, 1, 3, 1, 1);
        Discriminator {
            arch,
            convs,
            bns,
            head,
            n_params: layout.params,
            n_buffers: layout.buffers,
        }
    }

    pub fn init(&self, params: &mut [f64], buffers: &mut [f64], rng: &mut Rng) {
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            conv.init(params, rng);
            if let Some(bn) = bn {
                bn.init(params, buffers, rng);
            }
        }
        self.head.init(params, rng);
    }

    pub fn forward(&self, params: &[f64], buffers: &[f64], source: &Tensor, target: &Tensor, train: bool) -> (Tensor, DiscCache) {
        let mut h = Tensor::concat_channels(source, target);
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut pre = Vec::new();
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            let (mut t, cc) = conv.forward(params, &h);
            convs.push(cc);
            let bc = bn.as_ref().map(|bn| {
                let (y, c) = bn.forward(params, buffers, &t, train);
                t = y;
                c
            });
            bns.push(bc);
            h = leaky_relu(&t);
            pre.push(t);
        }
        let (logits, head) = self.head.forward(params, &h);
        (
            logits,
            DiscCache {
                convs,
                bns,
                pre,
                head,
                source_channels: source.c(),
            },
        )
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the candidate target.
    pub fn backward(&self, params: &[f64], cache: &DiscCache, d_logits: &Tensor, grads: &mut [f64]) -> Tensor {
        let mut g = self.head.backward(params, &cache.head, d_logits, grads);
        for i in (0..self.convs.len()).rev() {
            g = leaky_relu_backward(&cache.pre[i], &g);
            if let Some(bn) = &self.bns[i] {
                g = bn.backward(params, cache.bns[i].as_ref().unwrap(), &g, grads);
            }
            g = self.convs[i].backward(params, &cache.convs[i], &g, grads);
        }
        g.split_channels(cache.source_channels).1
    }

    pub fn update_running(&self, buffers: &mut [f64], cache: &DiscCache) {
        for (bn, c) in self.bns.iter().zip(&cache.bns) {
            if let (Some(bn), Some(c)) = (bn, c) {
                bn.update_running(buffers, c);
            }
        }
    }
}
