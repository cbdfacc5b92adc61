//! Pair records, in-memory datasets and the on-disk manifest format.
//!
//! A manifest is tab-separated text: one header line
//! `#cidmad-manifest format_version=1 split=<split> image_shape=HxWxC`, one
//! column-name line, then one record per pair. Image paths are relative to
//! the manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::morph::AttackKind;
use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#cidmad-manifest";
const COLUMNS: &str = "pair_id\tdocument\treference\tlabel\tconstituents\tattack_kind";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Bonafide,
    Morphed,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Morphed => "morphed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "morphed" => Ok(Label::Morphed),
            other => Err(Error::Parameter(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calibration,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Calibration, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "calibration" => Ok(Split::Calibration),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split {other:?}"))),
        }
    }
}

/// One document/reference pair. `label` and `constituents` are ground truth
/// for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub document: FaceImage,
    pub reference: FaceImage,
    pub label: Label,
    pub constituents: Vec<String>,
    pub attack_kind: AttackKind,
}

impl PairRecord {
    pub fn new(
        pair_id: impl Into<String>,
        document: FaceImage,
        reference: FaceImage,
        label: Label,
        constituents: Vec<String>,
        attack_kind: AttackKind,
    ) -> Result<Self> {
        let pair_id = pair_id.into();
        let expected = match label {
            Label::Bonafide => 1,
            Label::Morphed => 2,
        };
        if constituents.len() != expected {
            return Err(Error::Data(format!(
                "pair {pair_id}: {} pair needs {expected} constituent(s), got {}",
                label.as_str(),
                constituents.len()
            )));
        }
        if (label == Label::Bonafide) != (attack_kind == AttackKind::None) {
            return Err(Error::Data(format!(
                "pair {pair_id}: label {} inconsistent with attack {}",
                label.as_str(),
                attack_kind.as_str()
            )));
        }
        if reference.capture_kind() != CaptureKind::Reference {
            return Err(Error::Data(format!("pair {pair_id}: reference is not a reference capture")));
        }
        reference.ensure_shape(document.shape())?;
        Ok(PairRecord {
            pair_id,
            document,
            reference,
            label,
            constituents,
            attack_kind,
        })
    }

    /// The subject whose live capture is the reference.
    pub fn anchor(&self) -> &str {
        &self.constituents[0]
    }

    /// The second morph contributor, if any.
    pub fn second(&self) -> Option<&str> {
        self.constituents.get(1).map(String::as_str)
    }
}

/// Label-free view of a pair, the only thing translator training sees.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub pair_id: &'a str,
    pub source: &'a FaceImage,
    pub target: &'a FaceImage,
}

/// Loaded pairs of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub shape: ImageShape,
    pub pairs: Vec<PairRecord>,
}

impl Dataset {
    pub fn training_view(&self) -> Vec<TrainingPair<'_>> {
        self.pairs
            .iter()
            .map(|p| TrainingPair {
                pair_id: &p.pair_id,
                source: &p.document,
                target: &p.reference,
            })
            .collect()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.pairs.iter().flat_map(|p| p.constituents.iter().cloned()).collect()
    }

    /// Bonafide pairs plus morphs of the given attack kind.
    pub fn restrict_attack(&self, attack: AttackKind) -> Dataset {
        Dataset {
            split: self.split,
            shape: self.shape,
            pairs: self
                .pairs
                .iter()
                .filter(|p| p.attack_kind == AttackKind::None || p.attack_kind == attack)
                .cloned()
                .collect(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.pairs.iter().filter(|p| p.label == label).count()
    }

    /// Writes images under `dir/images` and returns the manifest describing them.
    pub fn persist(&self, dir: &Path) -> Result<CorpusManifest> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut entries = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let doc = PathBuf::from("images").join(format!("{}_doc.png", p.pair_id));
            let reference = PathBuf::from("images").join(format!("{}_ref.png", p.pair_id));
            p.document.save_png(&dir.join(&doc))?;
            p.reference.save_png(&dir.join(&reference))?;
            entries.push(ManifestEntry {
                pair_id: p.pair_id.clone(),
                document: doc,
                reference,
                label: p.label,
                constituents: p.constituents.clone(),
                attack_kind: p.attack_kind,
            });
        }
        let manifest = CorpusManifest {
            split: self.split,
            image_shape: self.shape,
            format_version: MANIFEST_FORMAT_VERSION,
            entries,
        };
        manifest.write(&dir.join(format!("{}.tsv", self.split.as_str())))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub document: PathBuf,
    pub reference: PathBuf,
    pub label: Label,
    pub constituents: Vec<String>,
    pub attack_kind: AttackKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub split: Split,
    pub image_shape: ImageShape,
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MAGIC} format_version={} split={} image_shape={}\n{COLUMNS}\n",
            self.format_version,
            self.split.as_str(),
            self.image_shape
        );
        for e in &self.entries {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.pair_id,
                e.document.display(),
                e.reference.display(),
                e.label.as_str(),
                e.constituents.join(","),
                e.attack_kind.as_str()
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |detail: String| Error::Corrupt {
            path: origin.into(),
            detail,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty manifest".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(corrupt("missing manifest header".into()));
        }
        let (mut version, mut split, mut shape) = (None, None, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| corrupt(format!("bad header field {f:?}")))?;
            match k {
                "format_version" => version = Some(v.parse::<u32>().map_err(|e| corrupt(e.to_string()))?),
                "split" => split = Some(Split::parse(v)?),
                "image_shape" => shape = Some(ImageShape::parse(v)?),
                _ => return Err(corrupt(format!("unknown header field {k:?}"))),
            }
        }
        let format_version = version.ok_or_else(|| corrupt("no format_version".into()))?;
        if format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                found: format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        if lines.next() != Some(COLUMNS) {
            return Err(corrupt("bad column line".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(corrupt(format!("record {n}: {} columns", cols.len())));
            }
            entries.push(ManifestEntry {
                pair_id: cols[0].to_string(),
                document: PathBuf::from(cols[1]),
                reference: PathBuf::from(cols[2]),
                label: Label::parse(cols[3])?,
                constituents: cols[4].split(',').map(str::to_string).collect(),
                attack_kind: AttackKind::parse(cols[5])?,
            });
        }
        Ok(CorpusManifest {
            split: split.ok_or_else(|| corrupt("no split".into()))?,
            image_shape: shape.ok_or_else(|| corrupt("no image_shape".into()))?,
            format_version,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CorpusManifest::parse(&text, path)
    }

    /// Loads every referenced image (relative to `base`), checking shapes.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let mut pairs = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let document = FaceImage::load_png(&base.join(&e.document))?;
            let reference = FaceImage::load_png(&base.join(&e.reference))?;
            document.ensure_shape(self.image_shape)?;
            reference.ensure_shape(self.image_shape)?;
            pairs.push(PairRecord::new(
                e.pair_id.clone(),
                document,
                reference,
                e.label,
                e.constituents.clone(),
                e.attack_kind,
            )?);
        }
        Ok(Dataset {
            split: self.split,
            shape: self.image_shape,
            pairs,
        })
    }
}

/// Reads `<dir>/<split>.tsv` and its images.
pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    CorpusManifest::read(&dir.join(format!("{}.tsv", split.as_str())))?.load(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Label) -> ManifestEntry {
        ManifestEntry {
            pair_id: id.into(),
            document: PathBuf::from(format!("images/{id}_doc.png")),
            reference: PathBuf::from(format!("images/{id}_ref.png")),
            label,
            constituents: match label {
                Label::Bonafide => vec!["s1".into()],
                Label::Morphed => vec!["s1".into(), "s2".into()],
            },
            attack_kind: match label {
                Label::Bonafide => AttackKind::None,
                Label::Morphed => AttackKind::LandmarkMorph,
            },
        }
    }

    #[test]
    fn text_round_trip() {
        let m = CorpusManifest {
            split: Split::Test,
            image_shape: ImageShape::new(64, 64, 3),
            format_version: MANIFEST_FORMAT_VERSION,
            entries: vec![entry("p0", Label::Bonafide), entry("p1", Label::Morphed)],
        };
        let back = CorpusManifest::parse(&m.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn wrong_version_is_reported() {
        let text = format!("{MAGIC} format_version=9 split=train image_shape=8x8x3\n{COLUMNS}\n");
        match CorpusManifest::parse(&text, Path::new("x")) {
            Err(Error::Version { found: 9, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_and_constituents_must_agree() {
        let shape = ImageShape::new(4, 4, 1);
        let doc = FaceImage::filled(shape, 0.5, CaptureKind::Document);
        let reference = FaceImage::filled(shape, 0.5, CaptureKind::Reference);
        let err = PairRecord::new("p", doc.clone(), reference.clone(), Label::Morphed, vec!["a".into()], AttackKind::LandmarkMorph)
            .unwrap_err();
        assert_eq!(err.kind(), "data");
        let err = PairRecord::new("p", doc.clone(), doc, Label::Bonafide, vec!["a".into()], AttackKind::None).unwrap_err();
        assert_eq!(err.kind(), "data");
    }
}
