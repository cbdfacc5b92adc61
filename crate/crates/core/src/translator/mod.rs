//! Conditional image translator: maps a document capture toward the trusted
//! reference capture.

mod checkpoint;
pub mod network;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{from_tensor, to_tensor, CaptureKind, FaceImage, ImageShape};
use crate::nn::{bce_with_logits, Adam, Tensor};
use crate::rng;

pub use checkpoint::{load, save, CHECKPOINT_VERSION};
pub use network::{Architecture, Discriminator, Generator, NoiseDraw};
pub use train::{resume, train, EpochLog, TrainOptions, TrainingRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    /// Dropout in the deepest decoder levels, active at train and inference.
    Dropout,
    /// A standard-normal input channel concatenated to the source.
    GaussianChannel,
    Both,
}

impl NoisePolicy {
    pub fn dropout(self) -> bool {
        matches!(self, NoisePolicy::Dropout | NoisePolicy::Both)
    }
    pub fn channel(self) -> bool {
        matches!(self, NoisePolicy::GaussianChannel | NoisePolicy::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub lambda_l1: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub epochs: usize,
    /// Share of the epochs, at the end, over which the learning rate decays
    /// linearly toward zero.
    pub decay_fraction: f64,
    pub batch_size: usize,
    pub noise_policy: NoisePolicy,
    pub seed: u64,
    /// Generator levels; each halves the spatial size.
    pub depth: usize,
    pub base_channels: usize,
    pub disc_channels: usize,
    pub disc_layers: usize,
    /// Write a checkpoint every this many epochs (0 disables intermediate ones).
    pub checkpoint_every: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            lambda_l1: 100.0,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            epochs: 200,
            decay_fraction: 0.5,
            batch_size: 1,
            noise_policy: NoisePolicy::Dropout,
            seed: 11,
            depth: 5,
            base_channels: 16,
            disc_channels: 16,
            disc_layers: 2,
            checkpoint_every: 10,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_l1 >= 0.0) || !self.lambda_l1.is_finite() {
            return bad("lambda_l1 must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1 must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return bad("decay_fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.depth == 0 || self.base_channels == 0 || self.disc_channels == 0 || self.disc_layers == 0 {
            return bad("network sizes must be positive");
        }
        Ok(())
    }

    /// Learning rate used during zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decay = (self.epochs as f64 * self.decay_fraction).round() as usize;
        let start = self.epochs - decay;
        if epoch < start {
            return self.learning_rate;
        }
        self.learning_rate * (1.0 - (epoch + 1 - start) as f64 / (decay + 1) as f64)
    }

    pub fn architecture(&self, image: ImageShape) -> Result<Architecture> {
        self.validate()?;
        let step = 1usize << self.depth;
        if image.height % step != 0 || image.width % step != 0 {
            return Err(Error::Config(format!(
                "image {image} is not divisible by 2^{} as the generator depth requires",
                self.depth
            )));
        }
        Ok(Architecture {
            image,
            depth: self.depth,
            base_channels: self.base_channels,
            disc_channels: self.disc_channels,
            disc_layers: self.disc_layers,
            noise_channel: self.noise_policy.channel(),
            dropout: self.noise_policy.dropout(),
        })
    }
}

/// Generator and discriminator parameters with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    pub arch: Architecture,
    pub generator_params: Vec<f64>,
    pub generator_buffers: Vec<f64>,
    pub discriminator_params: Vec<f64>,
    pub discriminator_buffers: Vec<f64>,
    pub g_adam: Adam,
    pub d_adam: Adam,
    pub epoch_trained: usize,
}

/// Adversarial, reconstruction and discriminator loss on one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub adv_g: f64,
    pub l1: f64,
    pub adv_d: f64,
}

impl TranslatorModel {
    /// Fresh model with weights drawn from the config seed.
    pub fn init(config: &TranslatorConfig, image: ImageShape) -> Result<Self> {
        let arch = config.architecture(image)?;
        let g = Generator::new(arch);
        let d = Discriminator::new(arch);
        let mut init_rng = rng::stream(config.seed, &[rng::tag("init")]);
        let mut gp = vec![0.0; g.n_params];
        let mut gb = vec![0.0; g.n_buffers];
        g.init(&mut gp, &mut gb, &mut init_rng);
        let mut dp = vec![0.0; d.n_params];
        let mut db = vec![0.0; d.n_buffers];
        d.init(&mut dp, &mut db, &mut init_rng);
        Ok(TranslatorModel {
            config: config.clone(),
            arch,
            g_adam: Adam::new(gp.len(), config.learning_rate, config.adam_beta1),
            d_adam: Adam::new(dp.len(), config.learning_rate, config.adam_beta1),
            generator_params: gp,
            generator_buffers: gb,
            discriminator_params: dp,
            discriminator_buffers: db,
            epoch_trained: 0,
        })
    }

    pub fn image_shape(&self) -> ImageShape {
        self.arch.image
    }

    pub fn generator(&self) -> Generator {
        Generator::new(self.arch)
    }

    pub fn discriminator(&self) -> Discriminator {
        Discriminator::new(self.arch)
    }

    /// SHA-256 over all network parameters and normalization buffers.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for blob in [
            &self.generator_params,
            &self.generator_buffers,
            &self.discriminator_params,
            &self.discriminator_buffers,
        ] {
            for v in blob.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check(&self, x: &FaceImage) -> Result<()> {
        x.ensure_shape(self.arch.image)
    }

    /// Translation `O = G(x, z)` with normalization running statistics.
    /// The stochastic input is fully determined by `seed`.
    pub fn translate(&self, x: &FaceImage, seed: u64) -> Result<FaceImage> {
        self.check(x)?;
        let g = self.generator();
        let mut r = rng::stream(seed, &[rng::tag("translate")]);
        let noise = g.draw_noise(1, seed, &mut r);
        let cache = g.forward(&self.generator_params, &self.generator_buffers, &to_net(&[x]), false, &noise);
        Ok(from_net(Generator::output(&cache), 0))
    }

    /// The generator output as the training step sees it (batch statistics),
    /// with the noise derived from `seed`.
    pub fn training_output(&self, x: &FaceImage, seed: u64) -> Result<FaceImage> {
        self.check(x)?;
        let g = self.generator();
        let noise = g.draw_noise(1, seed, &mut rng::stream(seed, &[rng::tag("loss")]));
        let cache = g.forward(&self.generator_params, &self.generator_buffers, &to_net(&[x]), true, &noise);
        Ok(from_net(Generator::output(&cache), 0))
    }

    /// The three objective components for a single pair, computed exactly as
    /// a training step combines them but without touching any state.
    pub fn loss_terms(&self, x: &FaceImage, y: &FaceImage, seed: u64) -> Result<LossTerms> {
        self.check(x)?;
        self.check(y)?;
        let g = self.generator();
        let d = self.discriminator();
        let xt = to_net(&[x]);
        let yt = to_net(&[y]);
        let noise = g.draw_noise(1, seed, &mut rng::stream(seed, &[rng::tag("loss")]));
        let gc = g.forward(&self.generator_params, &self.generator_buffers, &xt, true, &noise);
        let fake = Generator::output(&gc);
        let dp = &self.discriminator_params;
        let db = &self.discriminator_buffers;
        let (real_logits, _) = d.forward(dp, db, &xt, &yt, true);
        let (fake_logits, _) = d.forward(dp, db, &xt, fake, true);
        let adv_d = 0.5 * (bce_with_logits(&real_logits, 1.0).0 + bce_with_logits(&fake_logits, 0.0).0);
        let adv_g = bce_with_logits(&fake_logits, 1.0).0;
        Ok(LossTerms {
            adv_g,
            l1: l1_loss(fake, &yt).0,
            adv_d,
        })
    }

    /// Generator objective `adv_g + lambda * l1` on one pair and its gradient
    /// with respect to the generator parameters.
    pub fn generator_objective(&self, x: &FaceImage, y: &FaceImage, seed: u64) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        self.check(y)?;
        let g = self.generator();
        let noise = g.draw_noise(1, seed, &mut rng::stream(seed, &[rng::tag("loss")]));
        let xt = to_net(&[x]);
        let yt = to_net(&[y]);
        let mut grads = vec![0.0; self.generator_params.len()];
        let value = generator_step(self, &g, &self.discriminator(), &xt, &yt, &noise, &mut grads).0;
        Ok((value, grads))
    }

    /// Sign pattern of every kink the generator objective passes through
    /// (activation inputs and reconstruction residuals) at `params`. Central
    /// differences are only meaningful between points with equal patterns.
    pub fn objective_kinks(&self, params: &[f64], x: &FaceImage, y: &FaceImage, seed: u64) -> Result<Vec<i8>> {
        self.check(x)?;
        self.check(y)?;
        let g = self.generator();
        let d = self.discriminator();
        let noise = g.draw_noise(1, seed, &mut rng::stream(seed, &[rng::tag("loss")]));
        let xt = to_net(&[x]);
        let yt = to_net(&[y]);
        let gc = g.forward(params, &self.generator_buffers, &xt, true, &noise);
        let fake = Generator::output(&gc);
        let (_, dc) = d.forward(&self.discriminator_params, &self.discriminator_buffers, &xt, fake, true);
        let mut out = Vec::new();
        gc.activation_signs(&mut out);
        dc.activation_signs(&mut out);
        let residual = Tensor::from_vec(fake.shape, fake.data.iter().zip(&yt.data).map(|(a, b)| a - b).collect());
        network::signs_of(&residual, &mut out);
        Ok(out)
    }

    /// Central-difference derivative of the generator objective along
    /// parameter `i`, or `None` when `[p - h, p + h]` crosses a kink.
    pub fn central_difference(&self, x: &FaceImage, y: &FaceImage, seed: u64, i: usize, h: f64) -> Result<Option<f64>> {
        let mut p = self.generator_params.clone();
        let at = self.objective_kinks(&p, x, y, seed)?;
        p[i] = self.generator_params[i] + h;
        let (kp, fp) = (self.objective_kinks(&p, x, y, seed)?, self.generator_objective_at(&p, x, y, seed)?);
        p[i] = self.generator_params[i] - h;
        let (km, fm) = (self.objective_kinks(&p, x, y, seed)?, self.generator_objective_at(&p, x, y, seed)?);
        if kp != at || km != at {
            return Ok(None);
        }
        Ok(Some((fp - fm) / (2.0 * h)))
    }

    /// Objective value alone, with explicit generator parameters.
    pub fn generator_objective_at(&self, params: &[f64], x: &FaceImage, y: &FaceImage, seed: u64) -> Result<f64> {
        let mut probe = self.clone();
        probe.generator_params.copy_from_slice(params);
        Ok(probe.generator_objective(x, y, seed)?.0)
    }
}

/// Mean absolute error and its gradient with respect to `pred`.
/// Images batched into the network range `[-1, 1]`.
pub(crate) fn to_net(images: &[&FaceImage]) -> Tensor {
    let mut t = to_tensor(images);
    t.data.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    t
}

pub(crate) fn from_net(t: &Tensor, i: usize) -> FaceImage {
    let mut t = t.clone();
    t.data.iter_mut().for_each(|v| *v = 0.5 * (*v + 1.0));
    from_tensor(&t, i, CaptureKind::Reference)
}

pub(crate) fn l1_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.data.len() as f64;
    let mut grad = Tensor::zeros(pred.shape);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (sum / n, grad)
}

/// Forward and backward for the generator objective. Returns
/// `(objective, adv_g, l1)` and accumulates into `grads`.
pub(crate) fn generator_step(
    model: &TranslatorModel,
    g: &Generator,
    d: &Discriminator,
    x: &Tensor,
    y: &Tensor,
    noise: &NoiseDraw,
    grads: &mut [f64],
) -> (f64, f64, f64) {
    let gc = g.forward(&model.generator_params, &model.generator_buffers, x, true, noise);
    let fake = Generator::output(&gc);
    let (logits, dc) = d.forward(&model.discriminator_params, &model.discriminator_buffers, x, fake, true);
    let (adv_g, dlogits) = bce_with_logits(&logits, 1.0);
    let mut scratch = vec![0.0; model.discriminator_params.len()];
    let mut dfake = d.backward(&model.discriminator_params, &dc, &dlogits, &mut scratch);
    let (l1, dl1) = l1_loss(fake, y);
    let lambda = model.config.lambda_l1;
    for (a, b) in dfake.data.iter_mut().zip(&dl1.data) {
        *a += lambda * b;
    }
    g.backward(&model.generator_params, &gc, noise, &dfake, grads);
    (adv_g + lambda * l1, adv_g, l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    pub(crate) fn tiny_config() -> TranslatorConfig {
        TranslatorConfig {
            depth: 2,
            base_channels: 2,
            disc_channels: 2,
            disc_layers: 1,
            epochs: 2,
            ..TranslatorConfig::default()
        }
    }

    pub(crate) fn random_image(shape: ImageShape, seed: u64) -> FaceImage {
        let mut r = rng::stream(seed, &[]);
        let px = (0..shape.len()).map(|_| r.gen::<f64>()).collect();
        FaceImage::new(shape, px, Vec::new(), CaptureKind::Document).unwrap()
    }

    #[test]
    fn untrained_output_is_in_range_and_shaped() {
        let shape = ImageShape::new(64, 64, 3);
        let m = TranslatorModel::init(&TranslatorConfig::default(), shape).unwrap();
        let x = random_image(shape, 1);
        let o = m.translate(&x, 5).unwrap();
        assert_eq!(o.shape(), shape);
        assert!(o.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(o, m.translate(&x, 5).unwrap());
    }

    #[test]
    fn learning_rate_decays_linearly_over_the_tail() {
        let cfg = TranslatorConfig {
            epochs: 10,
            decay_fraction: 0.4,
            learning_rate: 1.0,
            ..TranslatorConfig::default()
        };
        let lr: Vec<f64> = (0..10).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(&lr[..6], &[1.0; 6]);
        for (got, want) in lr[6..].iter().zip([0.8, 0.6, 0.4, 0.2]) {
            assert!((got - want).abs() < 1e-12, "{lr:?}");
        }
        let flat = TranslatorConfig {
            decay_fraction: 0.0,
            ..cfg.clone()
        };
        assert!((0..10).all(|e| flat.learning_rate_at(e) == 1.0));
        assert!(TranslatorConfig { decay_fraction: 1.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let m = TranslatorModel::init(&tiny_config(), ImageShape::new(8, 8, 3)).unwrap();
        let x = random_image(ImageShape::new(16, 16, 3), 1);
        assert_eq!(m.translate(&x, 0).unwrap_err().kind(), "shape");
    }

    #[test]
    fn l1_is_zero_when_target_is_the_generator_output() {
        let shape = ImageShape::new(8, 8, 3);
        let m = TranslatorModel::init(&tiny_config(), shape).unwrap();
        let x = random_image(shape, 3);
        let y = m.training_output(&x, 9).unwrap();
        assert!(m.loss_terms(&x, &y, 9).unwrap().l1 < 1e-12);
    }

    #[test]
    fn l1_uses_mean_reduction() {
        let p = Tensor::from_vec([1, 3, 4, 4], vec![0.25; 48]);
        let t = Tensor::from_vec([1, 3, 4, 4], vec![0.5; 48]);
        assert!((l1_loss(&p, &t).0 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_channel_noise_is_reproducible() {
        let cfg = TranslatorConfig {
            noise_policy: NoisePolicy::GaussianChannel,
            ..tiny_config()
        };
        let m = TranslatorModel::init(&cfg, ImageShape::new(8, 8, 3)).unwrap();
        let g = m.generator();
        let a = g.draw_noise(1, 4, &mut rng::stream(4, &[]));
        let b = g.draw_noise(1, 4, &mut rng::stream(4, &[]));
        assert_eq!(a, b);
        let z = a.channel.unwrap();
        assert_eq!(z.len(), 64);
        let mean = z.iter().sum::<f64>() / 64.0;
        assert!(mean.abs() < 0.5);
        assert!(a.dropout_masks.iter().all(Option::is_none));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let shape = ImageShape::new(8, 8, 3);
        let mut r = rng::stream(5, &[]);
        let mut checked = 0;
        for seed in 0..3 {
            let m = TranslatorModel::init(&TranslatorConfig { seed, ..tiny_config() }, shape).unwrap();
            assert!(m.generator_params.len() <= 1000);
            let (x, y) = (random_image(shape, 10 + seed), random_image(shape, 20 + seed));
            let (_, grad) = m.generator_objective(&x, &y, 1).unwrap();
            for _ in 0..10 {
                let i = r.gen_range(0..grad.len());
                if let Some(num) = m.central_difference(&x, &y, 1, i, 1e-3).unwrap() {
                    let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-8);
                    assert!(rel < 1e-4, "param {i}: analytic {} numeric {num}", grad[i]);
                    checked += 1;
                }
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TranslatorConfig { lambda_l1: -1.0, ..tiny_config() },
            TranslatorConfig { learning_rate: 0.0, ..tiny_config() },
            TranslatorConfig { epochs: 0, ..tiny_config() },
            TranslatorConfig { adam_beta1: 1.0, ..tiny_config() },
        ] {
            assert_eq!(cfg.validate().unwrap_err().kind(), "config");
        }
        let err = TranslatorConfig::default().architecture(ImageShape::new(40, 40, 3)).unwrap_err();
        assert_eq!(err.kind(), "config");
    }
}
