//! Fixed appearance features followed by a learned linear embedding.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{gaussian_blur, Capture, Corpus, JitterProfile, Renderer, Split};
use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape};
use crate::nn::Adam;
use crate::rng;

/// Side of the pooled feature grid.
const GRID: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub embedding_dim: usize,
    /// Captures rendered per training subject.
    pub captures_per_subject: usize,
    /// Share of those captures taken as reference captures, expression and
    /// lighting change included.
    pub reference_share: f64,
    /// Pose, brightness and noise jitter level of the training captures.
    pub capture_jitter: f64,
    /// Upper bound of the extra pixel noise sigma drawn per training capture.
    pub augment_noise: f64,
    /// Upper bound of the blur sigma (pixels) drawn per training capture.
    pub augment_blur: f64,
    pub triplets: usize,
    /// Whiten the learned embedding against the subject-mean covariance.
    pub whiten: bool,
    /// Eigenvalue shrinkage of that whitening, relative to the mean eigenvalue.
    pub whiten_shrink: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            embedding_dim: 32,
            captures_per_subject: 12,
            reference_share: 0.0,
            capture_jitter: 1.0,
            augment_noise: 0.03,
            augment_blur: 1.0,
            triplets: 60_000,
            whiten: true,
            whiten_shrink: 0.2,
            margin: 1.0,
            learning_rate: 1e-3,
            seed: 23,
        }
    }
}

/// Frozen embedding comparator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBackend {
    pub shape: ImageShape,
    pub embedding_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Row-major `embedding_dim × feature_len` projection.
    pub projection: Vec<f64>,
}

/// Pooled color channels and pooled luma gradient magnitude.
pub fn features(img: &FaceImage) -> Vec<f64> {
    let s = img.shape();
    let (h, w) = (s.height, s.width);
    let g = GRID.min(h).min(w);
    let pool = |plane: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; g * g];
        let mut cnt = vec![0.0; g * g];
        for y in 0..h {
            for x in 0..w {
                let i = (y * g / h) * g + x * g / w;
                out[i] += plane[y * w + x];
                cnt[i] += 1.0;
            }
        }
        out.iter().zip(&cnt).map(|(v, c)| v / c).collect()
    };
    let mut f = Vec::with_capacity((s.channels + 1) * g * g);
    for c in 0..s.channels {
        f.extend(pool(img.channel(c)));
    }
    let luma = img.luma();
    let at = |x: isize, y: isize| luma[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut grad = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y) - at(x - 1, y);
            let gy = at(x, y + 1) - at(x, y - 1);
            grad[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    f.extend(pool(&grad));
    f
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
    n
}

impl EmbeddingBackend {
    pub fn feature_len(&self) -> usize {
        self.feature_mean.len()
    }

    fn standardized(&self, img: &FaceImage) -> Vec<f64> {
        features(img)
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((f, m), s)| (f - m) / s)
            .collect()
    }

    fn project(projection: &[f64], dim: usize, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        (0..dim)
            .map(|r| projection[r * n..(r + 1) * n].iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Unit-norm embedding.
    pub fn embed(&self, img: &FaceImage) -> Result<Vec<f64>> {
        img.ensure_shape(self.shape)?;
        let mut e = Self::project(&self.projection, self.embedding_dim, &self.standardized(img));
        normalize(&mut e);
        Ok(e)
    }

    /// `(1 + cos) / 2` of the two embeddings.
    pub fn score(&self, a: &FaceImage, b: &FaceImage) -> Result<f64> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        let cos: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
        Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
    }
}

/// Renders the training captures: `(subject index, image)`. Captures other
/// than the reference share keep the document expression and lighting but
/// take the pose and photometric jitter of a reference capture.
fn training_captures(corpus: &Corpus, cfg: &EmbeddingConfig) -> Result<Vec<(usize, FaceImage)>> {
    let subjects = corpus.subjects_in(Split::Train);
    if subjects.len() < 2 {
        return Err(Error::Data("embedding training needs at least two subjects".into()));
    }
    let n_ref = (cfg.captures_per_subject as f64 * cfg.reference_share).round() as usize;
    let renderer = Renderer::new(corpus.config.renderer()?.shape, JitterProfile { level: cfg.capture_jitter })?;
    let mut out = Vec::new();
    for (si, spec) in subjects.iter().enumerate() {
        for k in 0..cfg.captures_per_subject {
            let seed = 5_000_000 + k as u64;
            let mut capture = Capture::draw(CaptureKind::Reference, renderer.jitter, spec, seed, renderer.shape);
            let kind = if k < n_ref {
                CaptureKind::Reference
            } else {
                capture.smile = 0.0;
                capture.light_gradient = 0.0;
                CaptureKind::Document
            };
            let img = renderer.render_capture(spec, kind, &capture)?;
            out.push((si, degrade(&img, cfg, rng::derive_seed(cfg.seed, &[rng::tag("augment"), si as u64, k as u64]))?));
        }
    }
    Ok(out)
}

/// Rescales the projection so the subject means of the training embeddings
/// have identity covariance, spreading identity evenly across dimensions.
fn whiten(w: &[f64], dim: usize, z: &[Vec<f64>], subject: &[usize], subjects: usize, shrink: f64) -> Vec<f64> {
    let n = z[0].len();
    let mut means = vec![vec![0.0; dim]; subjects];
    let mut counts = vec![0.0; subjects];
    for (zi, &s) in z.iter().zip(subject) {
        let e = EmbeddingBackend::project(w, dim, zi);
        means[s].iter_mut().zip(&e).for_each(|(m, v)| *m += v);
        counts[s] += 1.0;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c);
    }
    let grand: Vec<f64> = (0..dim).map(|k| means.iter().map(|m| m[k]).sum::<f64>() / subjects as f64).collect();
    let cov = DMatrix::from_fn(dim, dim, |a, b| {
        means.iter().map(|m| (m[a] - grand[a]) * (m[b] - grand[b])).sum::<f64>() / subjects as f64
    });
    let eig = SymmetricEigen::new(cov);
    let ridge = shrink * eig.eigenvalues.mean() + eig.eigenvalues.max() * 1e-9;
    let mut out = vec![0.0; dim * n];
    for r in 0..dim {
        let scale = 1.0 / (eig.eigenvalues[r].max(0.0) + ridge).sqrt();
        for k in 0..dim {
            let c = eig.eigenvectors[(k, r)] * scale;
            for j in 0..n {
                out[r * n + j] += c * w[k * n + j];
            }
        }
    }
    out
}

/// Random blur and sensor noise, so the embedding does not key on
/// high-frequency content.
fn degrade(img: &FaceImage, cfg: &EmbeddingConfig, seed: u64) -> Result<FaceImage> {
    let mut r = rng::stream(seed, &[]);
    let s = img.shape();
    let blur = r.gen_range(0.0..=cfg.augment_blur);
    let noise = r.gen_range(0.0..=cfg.augment_noise);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut px = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        let plane = if blur > 0.05 {
            gaussian_blur(img.channel(c), s.width, s.height, blur)
        } else {
            img.channel(c).to_vec()
        };
        px.extend(plane.into_iter().map(|v| v + noise * normal.sample(&mut r)));
    }
    FaceImage::new(s, px, img.landmarks().to_vec(), img.capture_kind())
}

/// Learns the projection with a triplet margin loss on squared distances
/// between unit-norm embeddings of train-split subjects.
pub fn train_embedding(corpus: &Corpus, cfg: &EmbeddingConfig) -> Result<EmbeddingBackend> {
    if cfg.embedding_dim == 0 || cfg.captures_per_subject < 2 || cfg.triplets == 0 {
        return Err(Error::Config("embedding_dim, triplets must be positive and captures_per_subject ≥ 2".into()));
    }
    if !(cfg.whiten_shrink >= 0.0 && cfg.whiten_shrink.is_finite()) {
        return Err(Error::Config("whiten_shrink must be a finite non-negative number".into()));
    }
    let captures = training_captures(corpus, cfg)?;
    let feats: Vec<Vec<f64>> = captures.iter().map(|(_, img)| features(img)).collect();
    let n = feats[0].len();
    let count = feats.len() as f64;
    let mean: Vec<f64> = (0..n).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / count).collect();
    let std: Vec<f64> = (0..n)
        .map(|j| {
            let var = feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / count;
            var.sqrt().max(1e-6)
        })
        .collect();
    let z: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let mut r = rng::stream(cfg.seed, &[rng::tag("embedding")]);
    let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).unwrap();
    let dim = cfg.embedding_dim;
    let mut w: Vec<f64> = (0..dim * n).map(|_| normal.sample(&mut r)).collect();
    let mut adam = Adam::new(w.len(), cfg.learning_rate, 0.9);
    let by_subject: Vec<Vec<usize>> = {
        let k = captures.iter().map(|c| c.0).max().unwrap() + 1;
        let mut v = vec![Vec::new(); k];
        for (i, (s, _)) in captures.iter().enumerate() {
            v[*s].push(i);
        }
        v
    };
    let batch = 16;
    let mut grad = vec![0.0; w.len()];
    for _ in 0..cfg.triplets.div_ceil(batch) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..batch {
            let s = r.gen_range(0..by_subject.len());
            let mut other = r.gen_range(0..by_subject.len() - 1);
            if other >= s {
                other += 1;
            }
            let mut pick = by_subject[s].clone();
            pick.shuffle(&mut r);
            let (ia, ip) = (pick[0], pick[1]);
            let ineg = *by_subject[other].choose(&mut r).unwrap();
            let emb = |i: usize| {
                let mut e = EmbeddingBackend::project(&w, dim, &z[i]);
                let norm = normalize(&mut e);
                (e, norm)
            };
            let (ua, na) = emb(ia);
            let (up, np) = emb(ip);
            let (un, nn) = emb(ineg);
            let dp: f64 = ua.iter().zip(&up).map(|(a, b)| (a - b).powi(2)).sum();
            let dn: f64 = ua.iter().zip(&un).map(|(a, b)| (a - b).powi(2)).sum();
            if dp - dn + cfg.margin <= 0.0 {
                continue;
            }
            // gradients with respect to the unit vectors
            let ga: Vec<f64> = (0..dim).map(|k| 2.0 * (ua[k] - up[k]) - 2.0 * (ua[k] - un[k])).collect();
            let gp: Vec<f64> = (0..dim).map(|k| -2.0 * (ua[k] - up[k])).collect();
            let gn: Vec<f64> = (0..dim).map(|k| 2.0 * (ua[k] - un[k])).collect();
            for (u, norm, g, i) in [(&ua, na, &ga, ia), (&up, np, &gp, ip), (&un, nn, &gn, ineg)] {
                let dot: f64 = u.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                for k in 0..dim {
                    let de = (g[k] - u[k] * dot) / norm / batch as f64;
                    let row = &mut grad[k * n..(k + 1) * n];
                    for (gr, zv) in row.iter_mut().zip(&z[i]) {
                        *gr += de * zv;
                    }
                }
            }
        }
        adam.update(&mut w, &grad);
    }
    if cfg.whiten {
        w = whiten(&w, dim, &z, &captures.iter().map(|c| c.0).collect::<Vec<_>>(), by_subject.len(), cfg.whiten_shrink);
    }
    Ok(EmbeddingBackend {
        shape: corpus.config.renderer()?.shape,
        embedding_dim: dim,
        feature_mean: mean,
        feature_std: std,
        projection: w,
    })
}
