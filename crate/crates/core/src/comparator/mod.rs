//! Face comparators producing similarity scores in [0, 1].

mod embedding;
pub mod external;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::image::FaceImage;
use crate::metrics::{histogram_counts, pearson, tmr_at_fmr, Stage};

pub use embedding::{features, train_embedding, EmbeddingBackend, EmbeddingConfig};
pub use external::{Endpoint, ExternalBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub stage: Stage,
    pub pair_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComparatorBackend {
    Embedding(EmbeddingBackend),
    /// Pearson correlation of all pixels mapped to [0, 1].
    PixelBaseline,
    External(ExternalBackend),
}

/// Orders two images by their pixel data so that remote scorers always see
/// the same argument order.
fn canonical<'a>(a: &'a FaceImage, b: &'a FaceImage) -> (&'a FaceImage, &'a FaceImage) {
    let ord = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

impl ComparatorBackend {
    pub fn kind(&self) -> &'static str {
        match self {
            ComparatorBackend::Embedding(_) => "embedding",
            ComparatorBackend::PixelBaseline => "pixel_baseline",
            ComparatorBackend::External(_) => "external",
        }
    }

    /// Raw score in [0, 1].
    pub fn score(&self, a: &FaceImage, b: &FaceImage) -> Result<f64> {
        b.ensure_shape(a.shape())?;
        match self {
            ComparatorBackend::Embedding(e) => e.score(a, b),
            ComparatorBackend::PixelBaseline => {
                if a.pixels() == b.pixels() {
                    return Ok(1.0);
                }
                Ok(pearson(a.pixels(), b.pixels()).map_or(0.5, |r| ((1.0 + r) / 2.0).clamp(0.0, 1.0)))
            }
            ComparatorBackend::External(x) => {
                let (p, q) = canonical(a, b);
                x.score(p, q)
            }
        }
    }

    pub fn compare(&self, a: &FaceImage, b: &FaceImage, stage: Stage, pair_id: &str) -> Result<SimilarityScore> {
        Ok(SimilarityScore {
            value: self.score(a, b)?,
            stage,
            pair_id: pair_id.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("backend serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

pub const UTILITY_FMRS: [f64; 2] = [0.001, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    /// `(fmr, tmr, threshold)`; `None` entries when the distributions are
    /// degenerate.
    pub tmr: Vec<(f64, Option<(f64, f64)>)>,
    pub degenerate: bool,
}

impl UtilityReport {
    pub fn tmr_at(&self, fmr: f64) -> Option<f64> {
        self.tmr.iter().find(|(f, _)| *f == fmr).and_then(|(_, v)| v.map(|p| p.0))
    }

    /// Genuine-over-impostor win rate over all cross pairs.
    pub fn separation(&self) -> f64 {
        let mut wins = 0usize;
        for g in &self.genuine {
            wins += self.impostor.iter().filter(|i| g > i).count();
        }
        wins as f64 / (self.genuine.len() * self.impostor.len()) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("#cidmad-utility\n");
        let _ = writeln!(s, "degenerate\t{}", self.degenerate);
        let _ = writeln!(s, "genuine_count\t{}", self.genuine.len());
        let _ = writeln!(s, "impostor_count\t{}", self.impostor.len());
        for (fmr, v) in &self.tmr {
            match v {
                Some((tmr, t)) => {
                    let _ = writeln!(s, "tmr_at_fmr\t{fmr}\t{tmr}\t{t}");
                }
                None => {
                    let _ = writeln!(s, "tmr_at_fmr\t{fmr}\tundefined\tundefined");
                }
            }
        }
        s.push_str("histogram\tclass\tbin\tcount\n");
        for (name, v) in [("genuine", &self.genuine), ("impostor", &self.impostor)] {
            for (i, c) in histogram_counts(v, 20).iter().enumerate() {
                let _ = writeln!(s, "histogram\t{name}\t{i}\t{c}");
            }
        }
        s
    }
}

/// Genuine and impostor distributions from labelled probes and gallery
/// images: every probe is compared with every gallery entry.
pub fn utility_from_samples(
    backend: &ComparatorBackend,
    probes: &[(&str, &FaceImage)],
    gallery: &[(&str, &FaceImage)],
) -> Result<UtilityReport> {
    let mut ids: Vec<&str> = probes.iter().chain(gallery).map(|p| p.0).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Data("utility calibration needs at least two subjects".into()));
    }
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (ps, p) in probes {
        for (gs, g) in gallery {
            let s = backend.score(p, g)?;
            if ps == gs {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Data("need both genuine and impostor comparisons".into()));
    }
    let mut tmr = Vec::new();
    let mut degenerate = false;
    for fmr in UTILITY_FMRS {
        let v = tmr_at_fmr(&genuine, &impostor, fmr)?;
        degenerate |= v.is_none();
        tmr.push((fmr, v));
    }
    Ok(UtilityReport {
        genuine,
        impostor,
        tmr,
        degenerate,
    })
}

/// Document-versus-reference utility over the bonafide pairs of a split.
pub fn calibrate_utility(backend: &ComparatorBackend, data: &Dataset) -> Result<UtilityReport> {
    let bona: Vec<_> = data.pairs.iter().filter(|p| p.label == Label::Bonafide).collect();
    let probes: Vec<(&str, &FaceImage)> = bona.iter().map(|p| (p.anchor(), &p.document)).collect();
    let gallery: Vec<(&str, &FaceImage)> = bona.iter().map(|p| (p.anchor(), &p.reference)).collect();
    utility_from_samples(backend, &probes, &gallery)
}
