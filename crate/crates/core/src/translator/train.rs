//! Alternating discriminator / generator updates.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{checkpoint, generator_step, TranslatorConfig, TranslatorModel};
use crate::corpus::TrainingPair;
use crate::error::{Error, Result};
use crate::image::FaceImage;
use crate::nn::{bce_with_logits, Tensor};
use crate::rng;

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// One-based epoch number.
    pub epoch: usize,
    pub adv_g: f64,
    pub l1: f64,
    pub adv_d: f64,
    pub wall_time: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tadv_g\tl1\tadv_d\twall_time";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.3}",
            self.epoch, self.adv_g, self.l1, self.adv_d, self.wall_time
        )
    }

    /// Same losses, ignoring wall time.
    pub fn same_losses(&self, other: &EpochLog) -> bool {
        self.epoch == other.epoch && self.adv_g == other.adv_g && self.l1 == other.l1 && self.adv_d == other.adv_d
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where periodic and final checkpoints go.
    pub checkpoint_dir: Option<PathBuf>,
    /// Append-only training curve.
    pub log_path: Option<PathBuf>,
}

impl TrainOptions {
    pub fn in_dir(checkpoint_dir: &Path) -> Self {
        TrainOptions {
            checkpoint_dir: Some(checkpoint_dir.to_path_buf()),
            log_path: Some(checkpoint_dir.join("train_log.tsv")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: TranslatorModel,
    pub history: Vec<EpochLog>,
}

/// Trains a fresh model on label-free (source, target) pairs.
pub fn train(pairs: &[TrainingPair<'_>], config: &TranslatorConfig, options: &TrainOptions) -> Result<TrainingRun> {
    let first = pairs.first().ok_or_else(|| Error::Data("training set is empty".into()))?;
    let model = TranslatorModel::init(config, first.source.shape())?;
    resume(model, pairs, options)
}

/// Continues training an existing model up to `model.config.epochs`.
pub fn resume(mut model: TranslatorModel, pairs: &[TrainingPair<'_>], options: &TrainOptions) -> Result<TrainingRun> {
    if pairs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for p in pairs {
        p.source.ensure_shape(model.image_shape())?;
        p.target.ensure_shape(model.image_shape())?;
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log_file = match &options.log_path {
        Some(path) => {
            let fresh = !path.exists() || model.epoch_trained == 0;
            let mut f = OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if fresh {
                writeln!(f, "{}", EpochLog::HEADER).map_err(|e| Error::io(path, e))?;
            }
            Some((f, path.clone()))
        }
        None => None,
    };

    let g = model.generator();
    let d = model.discriminator();
    let cfg = model.config.clone();
    let mut history = Vec::new();
    let mut last_finite: Option<EpochLog> = None;
    let started = Instant::now();
    while model.epoch_trained < cfg.epochs {
        let epoch = model.epoch_trained;
        let lr = cfg.learning_rate_at(epoch);
        model.g_adam.lr = lr;
        model.d_adam.lr = lr;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::tag("order"), epoch as u64]));
        let (mut s_g, mut s_l1, mut s_d, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&FaceImage> = chunk.iter().map(|&i| pairs[i].source).collect();
            let ys: Vec<&FaceImage> = chunk.iter().map(|&i| pairs[i].target).collect();
            let x = super::to_net(&xs);
            let y = super::to_net(&ys);
            let step_seed = rng::derive_seed(cfg.seed, &[rng::tag("step"), epoch as u64, b as u64]);
            let noise = g.draw_noise(chunk.len(), step_seed, &mut rng::stream(step_seed, &[]));

            // discriminator update on (x, y) against (x, G(x, z))
            let gc = g.forward(&model.generator_params, &model.generator_buffers, &x, true, &noise);
            g.update_running(&mut model.generator_buffers, &gc);
            let fake: Tensor = super::Generator::output(&gc).clone();
            drop(gc);
            let (real_logits, rc) = d.forward(&model.discriminator_params, &model.discriminator_buffers, &x, &y, true);
            d.update_running(&mut model.discriminator_buffers, &rc);
            let (fake_logits, fc) = d.forward(&model.discriminator_params, &model.discriminator_buffers, &x, &fake, true);
            d.update_running(&mut model.discriminator_buffers, &fc);
            let (lr, mut gr) = bce_with_logits(&real_logits, 1.0);
            let (lf, mut gf) = bce_with_logits(&fake_logits, 0.0);
            let adv_d = 0.5 * (lr + lf);
            gr.data.iter_mut().for_each(|v| *v *= 0.5);
            gf.data.iter_mut().for_each(|v| *v *= 0.5);
            let mut d_grads = vec![0.0; model.discriminator_params.len()];
            d.backward(&model.discriminator_params, &rc, &gr, &mut d_grads);
            d.backward(&model.discriminator_params, &fc, &gf, &mut d_grads);

            // generator update against the refreshed discriminator
            let mut g_grads = vec![0.0; model.generator_params.len()];
            model.d_adam.update(&mut model.discriminator_params, &d_grads);
            let (_, adv_g, l1) = generator_step(&model, &g, &d, &x, &y, &noise, &mut g_grads);
            if !(adv_g.is_finite() && l1.is_finite() && adv_d.is_finite()) {
                let detail = match last_finite {
                    Some(l) => format!(
                        "non-finite loss at step {b}; last finite epoch {} had adv_g={} l1={} adv_d={}",
                        l.epoch, l.adv_g, l.l1, l.adv_d
                    ),
                    None => format!("non-finite loss at step {b} (adv_g={adv_g}, l1={l1}, adv_d={adv_d})"),
                };
                return Err(Error::NonFinite { epoch: epoch + 1, detail });
            }
            model.g_adam.update(&mut model.generator_params, &g_grads);
            s_g += adv_g;
            s_l1 += l1;
            s_d += adv_d;
            steps += 1;
        }
        model.epoch_trained += 1;
        let n = steps as f64;
        let entry = EpochLog {
            epoch: model.epoch_trained,
            adv_g: s_g / n,
            l1: s_l1 / n,
            adv_d: s_d / n,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} adv_g={:.4} l1={:.4} adv_d={:.4}",
            entry.epoch,
            entry.adv_g,
            entry.l1,
            entry.adv_d
        );
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", entry.to_line()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        last_finite = Some(entry);
        history.push(entry);
        if let Some(dir) = &options.checkpoint_dir {
            if cfg.checkpoint_every > 0 && model.epoch_trained % cfg.checkpoint_every == 0 {
                checkpoint::save(&model, &dir.join(format!("epoch_{:04}.ckpt", model.epoch_trained)))?;
            }
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        checkpoint::save(&model, &dir.join("final.ckpt"))?;
    }
    Ok(TrainingRun { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig};
    use crate::image::ImageShape;
    use crate::translator::tests::{random_image, tiny_config};

    fn toy_pairs(n: usize) -> Vec<(FaceImage, FaceImage)> {
        let shape = ImageShape::new(8, 8, 3);
        (0..n)
            .map(|i| (random_image(shape, 100 + i as u64), random_image(shape, 200 + i as u64)))
            .collect()
    }

    fn view(p: &[(FaceImage, FaceImage)]) -> Vec<TrainingPair<'_>> {
        p.iter()
            .map(|(x, y)| TrainingPair {
                pair_id: "p",
                source: x,
                target: y,
            })
            .collect()
    }

    #[test]
    fn empty_training_set_is_a_data_error() {
        let err = train(&[], &tiny_config(), &TrainOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "data");
    }

    #[test]
    fn training_is_deterministic() {
        let p = toy_pairs(4);
        let a = train(&view(&p), &tiny_config(), &TrainOptions::default()).unwrap();
        let b = train(&view(&p), &tiny_config(), &TrainOptions::default()).unwrap();
        assert_eq!(a.model.checksum(), b.model.checksum());
        assert_eq!(a.model.epoch_trained, 2);
    }

    #[test]
    fn resuming_from_a_checkpoint_matches_uninterrupted_training() {
        let p = toy_pairs(4);
        let cfg = TranslatorConfig {
            epochs: 3,
            checkpoint_every: 1,
            ..tiny_config()
        };
        let dir = tempfile::tempdir().unwrap();
        let full = train(&view(&p), &cfg, &TrainOptions::in_dir(dir.path())).unwrap();
        let mid = checkpoint::load(&dir.path().join("epoch_0002.ckpt")).unwrap();
        assert_eq!(mid.epoch_trained, 2);
        let rest = resume(mid, &view(&p), &TrainOptions::default()).unwrap();
        assert!(rest.history[0].same_losses(&full.history[2]));
        assert_eq!(rest.model, full.model);
        let log = std::fs::read_to_string(dir.path().join("train_log.tsv")).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert!(log.starts_with(EpochLog::HEADER));
    }

    #[test]
    fn large_l1_weight_fits_targets_better() {
        let corpus = build_corpus(&CorpusConfig {
            subjects: 20,
            image_size: 16,
            train_pairs_per_class: 6,
            ..CorpusConfig::default()
        })
        .unwrap();
        let pairs = corpus.train.training_view();
        let base = TranslatorConfig {
            depth: 3,
            base_channels: 4,
            disc_channels: 4,
            epochs: 6,
            ..TranslatorConfig::default()
        };
        let fit = |lambda: f64| {
            let run = train(&pairs, &TranslatorConfig { lambda_l1: lambda, ..base.clone() }, &TrainOptions::default()).unwrap();
            pairs
                .iter()
                .map(|p| run.model.translate(p.source, 0).unwrap().mean_abs_diff(p.target))
                .sum::<f64>()
                / pairs.len() as f64
        };
        let (l0, l100) = (fit(0.0), fit(100.0));
        assert!(l100 < l0, "lambda=100 gives {l100}, lambda=0 gives {l0}");
    }
}
