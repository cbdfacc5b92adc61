//! Synthetic subjects, bonafide captures and morph attacks, organised into
//! subject-disjoint train, calibration and test splits.

mod manifest;
mod morph;
mod render;
pub mod warp;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use manifest::{
    load_split, CorpusManifest, Dataset, Label, ManifestEntry, PairRecord, Split, TrainingPair, MANIFEST_FORMAT_VERSION,
};
pub use morph::{equalize_histogram, gaussian_blur, morph_appearance, morph_landmark, AttackKind};
pub use render::{
    render_subject, template, Capture, JitterProfile, Renderer, SubjectSpec, GEOMETRY_DIM, NUM_LANDMARKS, TEXTURE_DIM,
};

use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub subjects: usize,
    pub train_frac: f64,
    pub calibration_frac: f64,
    /// Bonafide pairs in the train split; the same number of morphed pairs is added.
    pub train_pairs_per_class: usize,
    pub train_attack: AttackKind,
    pub test_attacks: Vec<AttackKind>,
    pub test_bonafide_per_subject: usize,
    pub test_morphs_per_subject: usize,
    pub calibration_bonafide_per_subject: usize,
    pub alpha: f64,
    /// Morph partners are drawn from this many nearest subjects in identity
    /// parameter space; 0 draws uniformly from the split. Either member of
    /// the pair may end up as the anchor.
    pub partner_candidates: usize,
    pub postprocess: bool,
    pub image_size: usize,
    pub channels: usize,
    pub jitter_level: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            subjects: 200,
            train_frac: 0.6,
            calibration_frac: 0.1,
            train_pairs_per_class: 120,
            train_attack: AttackKind::LandmarkMorph,
            test_attacks: vec![AttackKind::LandmarkMorph, AttackKind::AppearanceMorph],
            test_bonafide_per_subject: 4,
            test_morphs_per_subject: 4,
            calibration_bonafide_per_subject: 3,
            alpha: 0.5,
            partner_candidates: 2,
            postprocess: false,
            image_size: 64,
            channels: 3,
            jitter_level: 1.0,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn shape(&self) -> ImageShape {
        ImageShape::new(self.image_size, self.image_size, self.channels)
    }

    pub fn renderer(&self) -> Result<Renderer> {
        Renderer::new(
            self.shape(),
            JitterProfile {
                level: self.jitter_level,
            },
        )
    }

    /// Subject counts per split (train, calibration, test).
    pub fn split_sizes(&self) -> Result<(usize, usize, usize)> {
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.calibration_frac)
            || self.train_frac + self.calibration_frac > 1.0
        {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to at most 1".into()));
        }
        let n_train = (self.subjects as f64 * self.train_frac).round() as usize;
        let n_cal = (self.subjects as f64 * self.calibration_frac).round() as usize;
        let n_test = self.subjects.saturating_sub(n_train + n_cal);
        Ok((n_train, n_cal, n_test))
    }

    pub fn validate(&self) -> Result<()> {
        let (n_train, n_cal, n_test) = self.split_sizes()?;
        if n_train < 2 || n_train < self.train_pairs_per_class {
            return Err(Error::Config(format!(
                "{n_train} train subjects cannot supply {} bonafide and {} morphed pairs with distinct anchors",
                self.train_pairs_per_class, self.train_pairs_per_class
            )));
        }
        if self.train_pairs_per_class == 0 {
            return Err(Error::Config("train_pairs_per_class must be positive".into()));
        }
        if n_test < 2 {
            return Err(Error::Config(format!("{n_test} test subjects; need at least 2 to form morphs")));
        }
        if n_cal == 0 && self.calibration_bonafide_per_subject > 0 {
            return Err(Error::Config("calibration split is empty".into()));
        }
        if self.train_attack == AttackKind::None || self.test_attacks.contains(&AttackKind::None) {
            return Err(Error::Config("attack kinds must be morph attacks".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.renderer().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// A built corpus: subject identities and the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub subjects: Vec<(Split, SubjectSpec)>,
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Calibration => &self.calibration,
            Split::Test => &self.test,
        }
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectSpec> {
        self.subjects.iter().map(|(_, s)| s).find(|s| s.subject_id == id)
    }

    pub fn subjects_in(&self, split: Split) -> Vec<&SubjectSpec> {
        self.subjects.iter().filter(|(s, _)| *s == split).map(|(_, s)| s).collect()
    }

    /// Enrollment capture of a subject: a document-style image with its own
    /// jitter stream, independent of the pair captures.
    pub fn enrollment_image(&self, subject_id: &str, index: u64) -> Result<FaceImage> {
        let spec = self
            .subject(subject_id)
            .ok_or_else(|| Error::Data(format!("unknown subject {subject_id}")))?;
        self.config
            .renderer()?
            .render(spec, CaptureKind::Document, 1_000_000 + index)
    }

    /// Live capture of a subject: a reference-style image with its own
    /// jitter stream, independent of the pair captures.
    pub fn live_capture(&self, subject_id: &str, index: u64) -> Result<FaceImage> {
        let spec = self
            .subject(subject_id)
            .ok_or_else(|| Error::Data(format!("unknown subject {subject_id}")))?;
        self.config
            .renderer()?
            .render(spec, CaptureKind::Reference, 2_000_000 + index)
    }

    /// Writes `subjects.json`, the split manifests and all images under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<[CorpusManifest; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let subjects = SubjectsFile {
            config: self.config.clone(),
            subjects: self.subjects.clone(),
        };
        let path = dir.join("subjects.json");
        let text = serde_json::to_string_pretty(&subjects).expect("subjects serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok([
            self.train.persist(dir)?,
            self.calibration.persist(dir)?,
            self.test.persist(dir)?,
        ])
    }

    /// Reads back a corpus written by [`Corpus::persist`].
    pub fn load(dir: &Path) -> Result<Corpus> {
        let path = dir.join("subjects.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let subjects: SubjectsFile = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        Ok(Corpus {
            config: subjects.config,
            subjects: subjects.subjects,
            train: load_split(dir, Split::Train)?,
            calibration: load_split(dir, Split::Calibration)?,
            test: load_split(dir, Split::Test)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SubjectsFile {
    config: CorpusConfig,
    subjects: Vec<(Split, SubjectSpec)>,
}

struct PairFactory<'a> {
    config: &'a CorpusConfig,
    renderer: Renderer,
}

impl PairFactory<'_> {
    fn capture(&self, spec: &SubjectSpec, kind: CaptureKind, split: Split, slot: u64) -> Result<FaceImage> {
        let seed = rng::derive_seed(self.config.seed, &[rng::tag(split.as_str()), slot]);
        self.renderer.render(spec, kind, seed)
    }

    fn bonafide(&self, id: String, s: &SubjectSpec, split: Split, slot: u64) -> Result<PairRecord> {
        let doc = self.capture(s, CaptureKind::Document, split, 2 * slot)?;
        let reference = self.capture(s, CaptureKind::Reference, split, 2 * slot + 1)?;
        PairRecord::new(id, doc, reference, Label::Bonafide, vec![s.subject_id.clone()], AttackKind::None)
    }

    fn morphed(
        &self,
        id: String,
        anchor: &SubjectSpec,
        second: &SubjectSpec,
        attack: AttackKind,
        split: Split,
        slot: u64,
    ) -> Result<PairRecord> {
        let doc_a = self.capture(anchor, CaptureKind::Document, split, 3 * slot)?;
        let doc_b = self.capture(second, CaptureKind::Document, split, 3 * slot + 1)?;
        let reference = self.capture(anchor, CaptureKind::Reference, split, 3 * slot + 2)?;
        let doc = attack.apply(&doc_a, &doc_b, self.config.alpha, self.config.postprocess)?;
        PairRecord::new(
            id,
            doc,
            reference,
            Label::Morphed,
            vec![anchor.subject_id.clone(), second.subject_id.clone()],
            attack,
        )
    }
}

fn identity_distance(a: &SubjectSpec, b: &SubjectSpec) -> f64 {
    a.geometry_params
        .iter()
        .chain(&a.texture_params)
        .zip(b.geometry_params.iter().chain(&b.texture_params))
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

/// Look-alike pair around `pool[i]`: a partner uniform among the
/// `candidates` nearest other subjects (all of them when 0), then a fair
/// coin for which of the two is the anchor. Without the coin, subjects near
/// the centre of the population turn up as second constituents far more
/// often than as anchors.
fn look_alike_pair<'a>(
    pool: &[&'a SubjectSpec],
    i: usize,
    candidates: usize,
    rng: &mut rng::Rng,
) -> (&'a SubjectSpec, &'a SubjectSpec) {
    let mut others: Vec<usize> = (0..pool.len()).filter(|&j| j != i).collect();
    if candidates > 0 && candidates < others.len() {
        let d = |j: usize| identity_distance(pool[i], pool[j]);
        others.sort_by(|&x, &y| d(x).total_cmp(&d(y)).then(x.cmp(&y)));
        others.truncate(candidates);
    }
    let partner = pool[others[rng.gen_range(0..others.len())]];
    if rng.gen_bool(0.5) {
        (partner, pool[i])
    } else {
        (pool[i], partner)
    }
}

/// Builds the three splits. Subjects are partitioned before any pair is
/// formed, so no identity crosses splits.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let (n_train, n_cal, _) = config.split_sizes()?;
    let mut order: Vec<usize> = (0..config.subjects).collect();
    order.shuffle(&mut rng::stream(config.seed, &[rng::tag("split")]));
    let subjects: Vec<(Split, SubjectSpec)> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_cal {
                Split::Calibration
            } else {
                Split::Test
            };
            let spec = SubjectSpec::sample(format!("s{i:04}"), rng::derive_seed(config.seed, &[rng::tag("identity"), i as u64]));
            (split, spec)
        })
        .collect();
    let pool = |split: Split| -> Vec<&SubjectSpec> { subjects.iter().filter(|(s, _)| *s == split).map(|(_, s)| s).collect() };
    let factory = PairFactory {
        config,
        renderer: config.renderer()?,
    };
    let shape = config.shape();

    let train_pool = pool(Split::Train);
    let mut partner_rng = rng::stream(config.seed, &[rng::tag("partners"), rng::tag("train")]);
    let mut train = Vec::new();
    for i in 0..config.train_pairs_per_class {
        let s = train_pool[i];
        train.push(factory.bonafide(format!("train-b{i:04}"), s, Split::Train, i as u64)?);
        let (anchor, second) = look_alike_pair(&train_pool, i, config.partner_candidates, &mut partner_rng);
        train.push(factory.morphed(
            format!("train-m{i:04}"),
            anchor,
            second,
            config.train_attack,
            Split::Train,
            1_000 + i as u64,
        )?);
    }

    let cal_pool = pool(Split::Calibration);
    let mut calibration = Vec::new();
    for (i, s) in cal_pool.iter().enumerate() {
        for k in 0..config.calibration_bonafide_per_subject {
            let slot = (i * config.calibration_bonafide_per_subject + k) as u64;
            calibration.push(factory.bonafide(format!("cal-b{slot:04}"), s, Split::Calibration, slot)?);
        }
    }

    let test_pool = pool(Split::Test);
    let mut test = Vec::new();
    for (i, s) in test_pool.iter().enumerate() {
        for k in 0..config.test_bonafide_per_subject {
            let slot = (i * config.test_bonafide_per_subject + k) as u64;
            test.push(factory.bonafide(format!("test-b{slot:04}"), s, Split::Test, slot)?);
        }
    }
    for (ai, attack) in config.test_attacks.iter().enumerate() {
        let mut partner_rng = rng::stream(config.seed, &[rng::tag("partners"), rng::tag(attack.as_str())]);
        for i in 0..test_pool.len() {
            for k in 0..config.test_morphs_per_subject {
                let slot = (i * config.test_morphs_per_subject + k) as u64;
                let (anchor, second) = look_alike_pair(&test_pool, i, config.partner_candidates, &mut partner_rng);
                let tag = match attack {
                    AttackKind::AppearanceMorph => "a",
                    _ => "m",
                };
                test.push(factory.morphed(
                    format!("test-{tag}{slot:04}"),
                    anchor,
                    second,
                    *attack,
                    Split::Test,
                    100_000 * (ai as u64 + 1) + slot,
                )?);
            }
        }
    }

    Ok(Corpus {
        config: config.clone(),
        train: Dataset {
            split: Split::Train,
            shape,
            pairs: train,
        },
        calibration: Dataset {
            split: Split::Calibration,
            shape,
            pairs: calibration,
        },
        test: Dataset {
            split: Split::Test,
            shape,
            pairs: test,
        },
        subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            subjects: 12,
            train_frac: 0.5,
            calibration_frac: 0.17,
            train_pairs_per_class: 4,
            test_bonafide_per_subject: 1,
            test_morphs_per_subject: 1,
            calibration_bonafide_per_subject: 1,
            image_size: 32,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn splits_are_subject_disjoint() {
        let c = build_corpus(&small()).unwrap();
        let (a, b, t) = (c.train.subjects(), c.calibration.subjects(), c.test.subjects());
        assert!(a.is_disjoint(&b) && a.is_disjoint(&t) && b.is_disjoint(&t));
        assert_eq!(c.train.count(Label::Bonafide), 4);
        assert_eq!(c.train.count(Label::Morphed), 4);
    }

    #[test]
    fn either_look_alike_can_be_the_anchor() {
        let c = build_corpus(&CorpusConfig {
            subjects: 40,
            train_pairs_per_class: 16,
            ..small()
        })
        .unwrap();
        let bonafide: Vec<_> = c.train.pairs.iter().filter(|p| p.label == Label::Bonafide).collect();
        let morphs: Vec<_> = c.train.pairs.iter().filter(|p| p.label == Label::Morphed).collect();
        let kept = bonafide.iter().zip(&morphs).filter(|(b, m)| b.anchor() == m.anchor()).count();
        assert!(kept > 0 && kept < morphs.len(), "{kept}/{}", morphs.len());
        for (b, m) in bonafide.iter().zip(&morphs) {
            assert!(m.constituents.contains(&b.anchor().to_string()));
        }
    }

    #[test]
    fn too_few_subjects_is_a_config_error() {
        let cfg = CorpusConfig {
            subjects: 10,
            ..CorpusConfig::default()
        };
        assert_eq!(build_corpus(&cfg).unwrap_err().kind(), "config");
    }

    #[test]
    fn default_split_sizes_supply_distinct_training_anchors() {
        let cfg = CorpusConfig::default();
        let (train, cal, test) = cfg.split_sizes().unwrap();
        assert_eq!((train, cal, test), (120, 20, 60));
        assert!(train >= cfg.train_pairs_per_class);
    }

    #[test]
    fn persisted_corpus_loads_back_with_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let c = build_corpus(&small()).unwrap();
        c.persist(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.subjects, c.subjects);
        assert_eq!(back.test.pairs.len(), c.test.pairs.len());
        for (p, q) in back.test.pairs.iter().zip(&c.test.pairs) {
            assert_eq!(p.document, q.document.quantized());
            assert_eq!(p.constituents, q.constituents);
        }
    }
}
