//! Recovering the second contributor of a morph from the difference between
//! the document and the live reference.
//!
//! The demorpher is an ordinary translator trained on (difference image,
//! document) pairs. Its outputs are scored against enrolled documents of
//! both constituents; see [`assess_recovery`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comparator::ComparatorBackend;
use crate::corpus::{AttackKind, Corpus, Dataset, Label, TrainingPair};
use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape};
use crate::metrics::tmr_at_fmr;
use crate::rng;
use crate::translator::{self, TrainOptions, TrainingRun, TranslatorConfig, TranslatorModel};

/// FMR at which recovery is measured.
pub const RECOVERY_FMR: f64 = 0.01;

/// Per-channel affine map from the stored `[0, 1]` source back to the raw
/// difference: `raw = offset + scale * stored`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferencePair {
    pub pair_id: String,
    /// `document - reference`, rescaled into `[0, 1]`.
    pub source: FaceImage,
    /// The document.
    pub target: FaceImage,
    pub rescale: Rescale,
    /// Every channel of the raw difference was constant.
    pub degenerate: bool,
    pub label: Label,
    pub attack_kind: AttackKind,
    pub constituents: Vec<String>,
}

impl DifferencePair {
    /// The unscaled `document - reference` values.
    pub fn raw_difference(&self) -> Vec<f64> {
        let plane = self.source.shape().plane();
        self.source
            .pixels()
            .iter()
            .enumerate()
            .map(|(i, v)| self.rescale.offset[i / plane] + self.rescale.scale[i / plane] * v)
            .collect()
    }
}

/// Per-channel min/max rescaling of `document - reference`. A constant
/// channel maps to zero with unit scale.
pub fn difference_image(document: &FaceImage, reference: &FaceImage) -> Result<(FaceImage, Rescale, bool)> {
    let shape = document.shape();
    reference.ensure_shape(shape)?;
    let mut out = Vec::with_capacity(shape.len());
    let mut rescale = Rescale {
        offset: Vec::new(),
        scale: Vec::new(),
    };
    let mut degenerate = true;
    for c in 0..shape.channels {
        let raw: Vec<f64> = document.channel(c).iter().zip(reference.channel(c)).map(|(d, r)| d - r).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo {
            degenerate = false;
            hi - lo
        } else {
            1.0
        };
        out.extend(raw.iter().map(|v| ((v - lo) / scale).clamp(0.0, 1.0)));
        rescale.offset.push(lo);
        rescale.scale.push(scale);
    }
    Ok((FaceImage::new(shape, out, Vec::new(), CaptureKind::Document)?, rescale, degenerate))
}

pub fn make_difference_pairs(data: &Dataset) -> Result<Vec<DifferencePair>> {
    data.pairs
        .iter()
        .map(|p| {
            p.document.ensure_shape(data.shape)?;
            let (source, rescale, degenerate) = difference_image(&p.document, &p.reference)?;
            Ok(DifferencePair {
                pair_id: p.pair_id.clone(),
                source,
                target: p.document.clone(),
                rescale,
                degenerate,
                label: p.label,
                attack_kind: p.attack_kind,
                constituents: p.constituents.clone(),
            })
        })
        .collect()
}

/// Training subset: morphed pairs, plus bonafide ones when asked.
pub fn training_pairs(pairs: &[DifferencePair], include_bonafide: bool) -> Vec<TrainingPair<'_>> {
    pairs
        .iter()
        .filter(|p| include_bonafide || p.label == Label::Morphed)
        .map(|p| TrainingPair {
            pair_id: &p.pair_id,
            source: &p.source,
            target: &p.target,
        })
        .collect()
}

/// Trains a translator from difference images to documents.
pub fn train_demorpher(pairs: &[TrainingPair<'_>], config: &TranslatorConfig, options: &TrainOptions) -> Result<TrainingRun> {
    translator::train(pairs, config, options)
}

/// One enrolled document per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub entries: BTreeMap<String, FaceImage>,
}

impl Gallery {
    pub fn enroll(corpus: &Corpus, subjects: &BTreeSet<String>) -> Result<Gallery> {
        let entries = subjects
            .iter()
            .map(|s| Ok((s.clone(), corpus.enrollment_image(s, 0)?)))
            .collect::<Result<_>>()?;
        Ok(Gallery { entries })
    }

    fn get(&self, subject: &str) -> Result<&FaceImage> {
        self.entries
            .get(subject)
            .ok_or_else(|| Error::Data(format!("subject {subject} not enrolled")))
    }
}

/// Comparison scores behind a [`RecoveryReport`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveryScores {
    /// Output against the second constituent, one per morph.
    pub second: Vec<f64>,
    /// Output against the anchor, one per morph.
    pub anchor: Vec<f64>,
    /// Output against every enrolled non-constituent.
    pub impostor: Vec<f64>,
}

impl RecoveryScores {
    pub fn swapped(&self) -> RecoveryScores {
        RecoveryScores {
            second: self.anchor.clone(),
            anchor: self.second.clone(),
            impostor: self.impostor.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub tmr_second_at_fmr1: f64,
    pub tmr_anchor_at_fmr1: f64,
    /// `(tmr_second - tmr_anchor) / tmr_anchor`; infinite when only the
    /// anchor rate is zero, zero when both are.
    pub relative_gain: f64,
    pub majority_closer_to_second: f64,
    pub threshold: f64,
    pub morphs: usize,
}

impl RecoveryReport {
    pub fn from_scores(s: &RecoveryScores) -> Result<RecoveryReport> {
        if s.second.is_empty() || s.second.len() != s.anchor.len() {
            return Err(Error::Data("recovery needs one second and one anchor score per morph".into()));
        }
        let all: Vec<f64> = s.second.iter().chain(&s.anchor).copied().collect();
        let threshold = match tmr_at_fmr(&all, &s.impostor, RECOVERY_FMR)? {
            Some((_, t)) => t,
            None => f64::INFINITY,
        };
        let rate = |v: &[f64]| v.iter().filter(|&&x| x >= threshold).count() as f64 / v.len() as f64;
        let (second, anchor) = (rate(&s.second), rate(&s.anchor));
        let relative_gain = if anchor > 0.0 {
            (second - anchor) / anchor
        } else if second > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let closer = s.second.iter().zip(&s.anchor).filter(|(a, b)| a > b).count();
        Ok(RecoveryReport {
            tmr_second_at_fmr1: second,
            tmr_anchor_at_fmr1: anchor,
            relative_gain,
            majority_closer_to_second: closer as f64 / s.second.len() as f64,
            threshold,
            morphs: s.second.len(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("#cidmad-recovery\nmetric\tvalue\n");
        for (k, v) in [
            ("tmr_second_at_fmr1", self.tmr_second_at_fmr1),
            ("tmr_anchor_at_fmr1", self.tmr_anchor_at_fmr1),
            ("relative_gain", self.relative_gain),
            ("majority_closer_to_second", self.majority_closer_to_second),
            ("threshold", self.threshold),
            ("morphs", self.morphs as f64),
        ] {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores precomputed outputs, one per morphed pair, against the gallery.
pub fn recovery_scores(outputs: &[(&DifferencePair, FaceImage)], backend: &ComparatorBackend, gallery: &Gallery) -> Result<RecoveryScores> {
    let mut s = RecoveryScores::default();
    for (pair, out) in outputs {
        let (anchor, second) = match pair.constituents.as_slice() {
            [a, b] => (a, b),
            _ => return Err(Error::Data(format!("pair {}: no second constituent", pair.pair_id))),
        };
        s.anchor.push(backend.score(out, gallery.get(anchor)?)?);
        s.second.push(backend.score(out, gallery.get(second)?)?);
        for (id, img) in &gallery.entries {
            if !pair.constituents.contains(id) {
                s.impostor.push(backend.score(out, img)?);
            }
        }
    }
    Ok(s)
}

/// Demorphs every morphed pair and measures which constituent the outputs
/// resemble.
pub fn assess_recovery(
    demorpher: &TranslatorModel,
    backend: &ComparatorBackend,
    pairs: &[DifferencePair],
    gallery: &Gallery,
    seed: u64,
) -> Result<(RecoveryReport, RecoveryScores)> {
    let mut outputs = Vec::new();
    for p in pairs.iter().filter(|p| p.label == Label::Morphed) {
        let out = demorpher.translate(&p.source, rng::derive_seed(seed, &[rng::tag(&p.pair_id)]))?;
        outputs.push((p, out));
    }
    if outputs.is_empty() {
        return Err(Error::Data("no morphed pairs to demorph".into()));
    }
    let scores = recovery_scores(&outputs, backend, gallery)?;
    Ok((RecoveryReport::from_scores(&scores)?, scores))
}

/// Occlusion saliency of a pair plus the raw difference magnitude, both as
/// row-major `height x width` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub width: usize,
    pub height: usize,
    /// Score change per pixel, normalized to `[0, 1]`.
    pub heat: Vec<f64>,
    /// Largest unnormalized score change; `heat * scale` recovers it.
    pub scale: f64,
    /// Channel-mean `|a - b|`.
    pub magnitude: Vec<f64>,
}

impl Saliency {
    pub fn mean_heat(&self) -> f64 {
        self.heat.iter().sum::<f64>() / self.heat.len() as f64
    }

    /// Mean unnormalized score change.
    pub fn energy(&self) -> f64 {
        self.mean_heat() * self.scale
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude.iter().sum::<f64>() / self.magnitude.len() as f64
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = (0..self.heat.len()).fold(0, |b, i| if self.heat[i] > self.heat[b] { i } else { b });
        (i % self.width, i / self.width)
    }

    fn raster(&self, values: &[f64]) -> FaceImage {
        let shape = ImageShape::new(self.height, self.width, 3);
        let px: Vec<f64> = (0..3).flat_map(|_| values.iter().copied()).collect();
        FaceImage::new(shape, px, Vec::new(), CaptureKind::Document).expect("heat values are finite")
    }

    pub fn heat_image(&self) -> FaceImage {
        self.raster(&self.heat)
    }

    pub fn magnitude_image(&self) -> FaceImage {
        self.raster(&self.magnitude)
    }
}

/// Greys out a `window` square in both images at every `stride` step and
/// records how far the comparator score moves. Each pixel gets the mean
/// change over the windows covering it.
pub fn saliency_heatmap(a: &FaceImage, b: &FaceImage, backend: &ComparatorBackend, window: usize, stride: usize) -> Result<Saliency> {
    let shape = a.shape();
    b.ensure_shape(shape)?;
    let (w, h) = (shape.width, shape.height);
    if window == 0 || stride == 0 {
        return Err(Error::Parameter("window and stride must be positive".into()));
    }
    if window > w || window > h {
        return Err(Error::Parameter(format!("window {window} larger than {w}x{h} image")));
    }
    let base = backend.score(a, b)?;
    let starts = |n: usize| {
        let mut v: Vec<usize> = (0..=n - window).step_by(stride).collect();
        if *v.last().unwrap() != n - window {
            v.push(n - window);
        }
        v
    };
    let mut sum = vec![0.0; w * h];
    let mut cover = vec![0usize; w * h];
    for &y0 in &starts(h) {
        for &x0 in &starts(w) {
            let occlude = |img: &FaceImage| {
                let mut px = img.pixels().to_vec();
                for c in 0..shape.channels {
                    for y in y0..y0 + window {
                        let row = c * shape.plane() + y * w;
                        px[row + x0..row + x0 + window].fill(0.5);
                    }
                }
                FaceImage::new(shape, px, Vec::new(), img.capture_kind())
            };
            let change = (backend.score(&occlude(a)?, &occlude(b)?)? - base).abs();
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    sum[y * w + x] += change;
                    cover[y * w + x] += 1;
                }
            }
        }
    }
    let raw: Vec<f64> = sum.iter().zip(&cover).map(|(s, &c)| s / c as f64).collect();
    let hi = raw.iter().copied().fold(0.0, f64::max);
    let heat = if hi > 0.0 {
        raw.iter().map(|v| v / hi).collect()
    } else {
        vec![0.0; raw.len()]
    };
    let magnitude = (0..w * h)
        .map(|i| (0..shape.channels).map(|c| (a.channel(c)[i] - b.channel(c)[i]).abs()).sum::<f64>() / shape.channels as f64)
        .collect();
    Ok(Saliency {
        width: w,
        height: h,
        heat,
        scale: hi,
        magnitude,
    })
}

pub const SALIENCY_COLUMNS: &str = "pair_id\tlabel\tmean_heat\tenergy\tmean_magnitude\targmax_x\targmax_y";

pub fn saliency_row(pair_id: &str, label: Label, s: &Saliency) -> String {
    let (x, y) = s.argmax();
    format!(
        "{pair_id}\t{}\t{}\t{}\t{}\t{x}\t{y}",
        label.as_str(),
        s.mean_heat(),
        s.energy(),
        s.mean_magnitude()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn noise(shape: ImageShape, seed: u64) -> FaceImage {
        let mut r = rng::stream(seed, &[]);
        FaceImage::new(shape, (0..shape.len()).map(|_| r.gen::<f64>()).collect(), vec![], CaptureKind::Document).unwrap()
    }

    fn small_corpus() -> Corpus {
        build_corpus(&CorpusConfig {
            subjects: 24,
            image_size: 32,
            train_pairs_per_class: 4,
            test_bonafide_per_subject: 2,
            test_morphs_per_subject: 2,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_images_give_degenerate_difference() {
        let a = noise(ImageShape::new(8, 8, 3), 1);
        let (src, r, degenerate) = difference_image(&a, &a).unwrap();
        assert!(degenerate);
        assert!(src.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(r.scale, vec![1.0; 3]);
    }

    proptest! {
        #[test]
        fn rescale_round_trips(s1 in 0u64..1000, s2 in 0u64..1000) {
            let shape = ImageShape::new(6, 5, 3);
            let (a, b) = (noise(shape, s1), noise(shape, s2 + 1000));
            let (source, rescale, degenerate) = difference_image(&a, &b).unwrap();
            let p = DifferencePair {
                pair_id: "p".into(),
                source,
                target: a.clone(),
                rescale,
                degenerate,
                label: Label::Bonafide,
                attack_kind: AttackKind::None,
                constituents: vec!["s".into()],
            };
            prop_assert!(p.source.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            for (r, (x, y)) in p.raw_difference().iter().zip(a.pixels().iter().zip(b.pixels())) {
                prop_assert!((r - (x - y)).abs() < 1e-6);
            }
        }

        #[test]
        fn swapping_galleries_swaps_rates(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
                                          imp in prop::collection::vec(0.0f64..1.0, 2..60)) {
            let s = RecoveryScores {
                second: v.iter().map(|x| x.0).collect(),
                anchor: v.iter().map(|x| x.1).collect(),
                impostor: imp,
            };
            let a = RecoveryReport::from_scores(&s).unwrap();
            let b = RecoveryReport::from_scores(&s.swapped()).unwrap();
            prop_assert_eq!(a.tmr_second_at_fmr1, b.tmr_anchor_at_fmr1);
            prop_assert_eq!(a.tmr_anchor_at_fmr1, b.tmr_second_at_fmr1);
            prop_assert!((0.0..=1.0).contains(&a.majority_closer_to_second));
        }
    }

    #[test]
    fn morph_differences_vary_more_than_genuine_ones() {
        let c = small_corpus();
        let pairs = make_difference_pairs(&c.test).unwrap();
        let variance = |p: &DifferencePair| {
            let d = p.raw_difference();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64
        };
        let mean = |label: Label| {
            let v: Vec<f64> = pairs.iter().filter(|p| p.label == label).map(variance).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Morphed) > mean(Label::Bonafide));
    }

    fn control(c: &Corpus, second: bool) -> RecoveryReport {
        let backend = ComparatorBackend::PixelBaseline;
        let pairs = make_difference_pairs(&c.test).unwrap();
        let gallery = Gallery::enroll(c, &c.test.subjects()).unwrap();
        let outputs: Vec<_> = pairs
            .iter()
            .filter(|p| p.label == Label::Morphed)
            .map(|p| {
                let out = if second {
                    gallery.entries[&p.constituents[1]].clone()
                } else {
                    c.test.pairs.iter().find(|q| q.pair_id == p.pair_id).unwrap().reference.clone()
                };
                (p, out)
            })
            .collect();
        RecoveryReport::from_scores(&recovery_scores(&outputs, &backend, &gallery).unwrap()).unwrap()
    }

    #[test]
    fn constructed_recovery_controls() {
        let c = small_corpus();
        let anchor = control(&c, false);
        assert_eq!(anchor.majority_closer_to_second, 0.0);
        assert!(anchor.relative_gain <= 0.0);
        assert_eq!(control(&c, true).majority_closer_to_second, 1.0);
    }

    #[test]
    fn missing_second_constituent_is_a_data_error() {
        let c = small_corpus();
        let pairs = make_difference_pairs(&c.test).unwrap();
        let bona = pairs.iter().find(|p| p.label == Label::Bonafide).unwrap();
        let gallery = Gallery::enroll(&c, &c.test.subjects()).unwrap();
        let err = recovery_scores(&[(bona, bona.target.clone())], &ComparatorBackend::PixelBaseline, &gallery).unwrap_err();
        assert_eq!(err.kind(), "data");
    }

    #[test]
    fn uniform_pair_gives_flat_heat() {
        let a = FaceImage::filled(ImageShape::new(12, 12, 3), 0.3, CaptureKind::Document);
        let s = saliency_heatmap(&a, &a, &ComparatorBackend::PixelBaseline, 4, 2).unwrap();
        assert!(s.heat.iter().all(|&v| v == s.heat[0]));
        assert!(s.magnitude.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heat_peaks_on_the_differing_patch() {
        let shape = ImageShape::new(24, 24, 3);
        let a = noise(shape, 3);
        let mut px = a.pixels().to_vec();
        for c in 0..3 {
            for y in 14..20 {
                for x in 4..10 {
                    px[c * shape.plane() + y * 24 + x] = 1.0 - px[c * shape.plane() + y * 24 + x];
                }
            }
        }
        let b = FaceImage::new(shape, px, vec![], CaptureKind::Document).unwrap();
        let s = saliency_heatmap(&a, &b, &ComparatorBackend::PixelBaseline, 6, 2).unwrap();
        let (x, y) = s.argmax();
        assert!((4..10).contains(&x) && (14..20).contains(&y), "argmax at ({x}, {y})");
        assert!(s.heat.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.heat.iter().copied().fold(0.0, f64::max), 1.0);
        let raw_max = s.heat.iter().map(|h| h * s.scale).fold(0.0, f64::max);
        assert!((raw_max - s.scale).abs() < 1e-15);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let a = noise(ImageShape::new(8, 8, 3), 1);
        let err = saliency_heatmap(&a, &a, &ComparatorBackend::PixelBaseline, 9, 1).unwrap_err();
        assert_eq!(err.kind(), "parameter");
    }
}
