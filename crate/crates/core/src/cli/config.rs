//! The run configuration: one TOML file, every key optional.
//!
//! Values are layered as defaults, then the file, then `CIDMAD_*`
//! environment variables, then command-line flags. An environment variable
//! names a key path with `__` between levels, e.g.
//! `CIDMAD_TRANSLATOR__EPOCHS=20` or `CIDMAD_SEED=3`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comparator::{ComparatorBackend, EmbeddingConfig, ExternalBackend};
use crate::corpus::{AttackKind, Corpus};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::translator::TranslatorConfig;

pub const ENV_PREFIX: &str = "CIDMAD_";
/// Environment variables with the prefix that are not config keys.
const ENV_RESERVED: [&str; 1] = ["CIDMAD_LOG"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    Embedding,
    PixelBaseline,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorSettings {
    pub kind: ComparatorKind,
    pub embedding: EmbeddingConfig,
    /// Required when `kind = "external"`.
    pub external: Option<ExternalBackend>,
}

impl Default for ComparatorSettings {
    fn default() -> Self {
        ComparatorSettings {
            kind: ComparatorKind::Embedding,
            embedding: EmbeddingConfig::default(),
            external: None,
        }
    }
}

impl ComparatorSettings {
    /// Trains or wires up the configured backend.
    pub fn build(&self, corpus: &Corpus) -> Result<ComparatorBackend> {
        match self.kind {
            ComparatorKind::Embedding => Ok(ComparatorBackend::Embedding(crate::comparator::train_embedding(
                corpus,
                &self.embedding,
            )?)),
            ComparatorKind::PixelBaseline => Ok(ComparatorBackend::PixelBaseline),
            ComparatorKind::External => self
                .external
                .clone()
                .map(ComparatorBackend::External)
                .ok_or_else(|| Error::Config("comparator.kind = \"external\" needs [comparator.external]".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    /// Bonafide error rate the threshold is calibrated to on the
    /// calibration split.
    pub target_bpcer: f64,
    /// Fixed threshold; skips calibration when set.
    pub threshold: Option<f64>,
    pub translate_seed: u64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            target_bpcer: 0.1,
            threshold: None,
            translate_seed: DetectorConfig::default().translate_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossEvalSettings {
    pub train_attacks: Vec<AttackKind>,
    pub test_attacks: Vec<AttackKind>,
}

impl Default for CrossEvalSettings {
    fn default() -> Self {
        CrossEvalSettings {
            train_attacks: vec![AttackKind::LandmarkMorph, AttackKind::AppearanceMorph],
            test_attacks: vec![AttackKind::LandmarkMorph, AttackKind::AppearanceMorph],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemorphSettings {
    /// Train on bonafide difference images too, not only morphed ones.
    pub include_bonafide: bool,
    pub translator: TranslatorConfig,
    pub seed: u64,
    pub saliency_window: usize,
    pub saliency_stride: usize,
    /// Heatmap rasters written per class.
    pub heatmaps_per_class: usize,
}

impl Default for DemorphSettings {
    fn default() -> Self {
        DemorphSettings {
            include_bonafide: false,
            translator: TranslatorConfig::default(),
            seed: 0,
            saliency_window: 16,
            saliency_stride: 4,
            heatmaps_per_class: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; when set, every component seed is derived from it.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub corpus: crate::corpus::CorpusConfig,
    pub comparator: ComparatorSettings,
    pub translator: TranslatorConfig,
    pub detector: DetectorSettings,
    pub cross_eval: CrossEvalSettings,
    pub demorph: DemorphSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("runs/default"),
            corpus: Default::default(),
            comparator: Default::default(),
            translator: Default::default(),
            detector: Default::default(),
            cross_eval: Default::default(),
            demorph: Default::default(),
        }
    }
}

/// Command-line values that override the file and the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<RunConfig> {
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.resolved()
    }

    /// Layers the optional file, `vars` (normally the process environment)
    /// and `overrides` over the defaults.
    pub fn load(
        path: Option<&Path>,
        vars: impl IntoIterator<Item = (String, String)>,
        overrides: &Overrides,
    ) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !ENV_RESERVED.contains(&k.as_str()))
            .collect();
        vars.sort();
        for (k, v) in vars {
            let keys: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            set_path(&mut table, &keys, env_value(&v))
                .map_err(|m| Error::Config(format!("{k}: {m}")))?;
        }
        if let Some(out) = &overrides.out {
            table.insert("out".into(), toml::Value::String(out.display().to_string()));
        }
        if let Some(seed) = overrides.seed {
            table.insert("seed".into(), toml::Value::Integer(seed_value(seed)?));
        }
        Self::from_table(table)
    }

    /// Applies the global seed and validates every section.
    pub fn resolved(mut self) -> Result<RunConfig> {
        if let Some(s) = self.seed {
            seed_value(s)?;
            let d = |name: &str| rng::derive_seed(s, &[rng::tag(name)]) >> 1;
            self.corpus.seed = s;
            self.comparator.embedding.seed = d("comparator");
            self.translator.seed = d("translator");
            self.detector.translate_seed = d("detect");
            self.demorph.translator.seed = d("demorph");
            self.demorph.seed = d("demorph_translate");
        }
        self.corpus.validate()?;
        self.translator.validate()?;
        self.demorph.translator.validate()?;
        if !(0.0..=1.0).contains(&self.detector.target_bpcer) {
            return Err(Error::Config("detector.target_bpcer must lie in [0, 1]".into()));
        }
        if let Some(t) = self.detector.threshold {
            DetectorConfig {
                threshold: t,
                translate_seed: 0,
            }
            .validate()?;
        }
        if self.comparator.kind == ComparatorKind::External && self.comparator.external.is_none() {
            return Err(Error::Config("comparator.kind = \"external\" needs [comparator.external]".into()));
        }
        if self.demorph.saliency_window == 0 || self.demorph.saliency_stride == 0 {
            return Err(Error::Config("demorph saliency window and stride must be positive".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// TOML integers are signed; seeds beyond `i64::MAX` are rejected.
fn seed_value(seed: u64) -> Result<i64> {
    i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} exceeds {}", i64::MAX)))
}

/// An environment value read as a TOML value, or as a bare string.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, keys: &[String], value: toml::Value) -> std::result::Result<(), String> {
    match keys {
        [] => Err("empty key".into()),
        [k] if k.is_empty() => Err("empty key".into()),
        [k] => {
            table.insert(k.clone(), value);
            Ok(())
        }
        [k, rest @ ..] => {
            let entry = table.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_path(t, rest, value),
                _ => Err(format!("{k} is not a section")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::parse("[translator]\nepochz = 3\n").unwrap_err();
        assert_eq!(e.kind(), "config");
        assert!(e.to_string().contains("epochz"));
        assert_eq!(RunConfig::parse("colour = 1\n").unwrap_err().kind(), "config");
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.translator.epochs = 7;
        c.detector.threshold = Some(0.4);
        c.seed = Some(99);
        let c = c.resolved().unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn layering_order_is_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "out = \"from_file\"\n[translator]\nepochs = 5\nlambda_l1 = 10.0\n").unwrap();
        let env = vars(&[
            ("CIDMAD_TRANSLATOR__EPOCHS", "9"),
            ("CIDMAD_OUT", "from_env"),
            ("CIDMAD_LOG", "debug"),
            ("OTHER", "x"),
        ]);
        let c = RunConfig::load(Some(&p), env.clone(), &Overrides::default()).unwrap();
        assert_eq!(c.translator.epochs, 9);
        assert_eq!(c.translator.lambda_l1, 10.0);
        assert_eq!(c.out, PathBuf::from("from_env"));
        let flags = Overrides {
            out: Some("from_flag".into()),
            seed: Some(5),
        };
        let c = RunConfig::load(Some(&p), env, &flags).unwrap();
        assert_eq!(c.out, PathBuf::from("from_flag"));
        assert_eq!(c.corpus.seed, 5);
    }

    #[test]
    fn env_strings_and_bad_keys() {
        let c = RunConfig::load(None, vars(&[("CIDMAD_CORPUS__TRAIN_ATTACK", "appearance_morph")]), &Overrides::default()).unwrap();
        assert_eq!(c.corpus.train_attack, AttackKind::AppearanceMorph);
        let e = RunConfig::load(None, vars(&[("CIDMAD_TRANSLATOR__NOPE", "1")]), &Overrides::default()).unwrap_err();
        assert_eq!(e.kind(), "config");
    }

    #[test]
    fn global_seed_drives_component_seeds() {
        let a = RunConfig { seed: Some(1), ..RunConfig::default() }.resolved().unwrap();
        let b = RunConfig { seed: Some(2), ..RunConfig::default() }.resolved().unwrap();
        assert_ne!(a.translator.seed, b.translator.seed);
        assert_ne!(a.comparator.embedding.seed, b.comparator.embedding.seed);
        assert_eq!(a.clone().resolved().unwrap(), a);
    }

    #[test]
    fn invalid_sections_fail_fast() {
        assert_eq!(RunConfig::parse("[translator]\nepochs = 0\n").unwrap_err().kind(), "config");
        assert_eq!(RunConfig::parse("[detector]\nthreshold = 1.5\n").unwrap_err().kind(), "config");
        assert_eq!(RunConfig::parse("[comparator]\nkind = \"external\"\n").unwrap_err().kind(), "config");
    }
}
