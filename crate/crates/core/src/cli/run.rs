//! Pipeline stages over a run directory.
//!
//! ```text
//! <out>/config.toml            resolved configuration
//! <out>/manifests/             corpus: subjects.json, split manifests, images
//! <out>/checkpoints/           comparator.json, translator/, demorph/, cross_<attack>/
//! <out>/logs/                  training curves, decisions.tsv, threshold.tsv
//! <out>/report/                evaluation bundles, cross_eval.tsv, utility.tsv, demorph/
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use super::config::RunConfig;
use crate::comparator::{calibrate_utility, ComparatorBackend};
use crate::corpus::{build_corpus, AttackKind, Corpus, Label};
use crate::demorph::{self, Gallery};
use crate::detector::{self, calibrate_threshold, Decision, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::{build_report, cross_matrix_text, pearson_diag, CrossCell, EvalReport};
use crate::translator::{self, TrainOptions, TranslatorModel};

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn comparator(&self) -> PathBuf {
        self.checkpoints().join("comparator.json")
    }
    pub fn translator_dir(&self) -> PathBuf {
        self.checkpoints().join("translator")
    }
    pub fn translator(&self) -> PathBuf {
        self.translator_dir().join("final.ckpt")
    }
    pub fn demorph_dir(&self) -> PathBuf {
        self.checkpoints().join("demorph")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn decisions(&self) -> PathBuf {
        self.logs().join("decisions.tsv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    fn ensure(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    /// Writes the config echo, refusing to mix configurations in one
    /// directory.
    pub fn echo(&self, cfg: &RunConfig) -> Result<()> {
        self.ensure(&self.root)?;
        let path = self.config();
        let text = cfg.to_toml();
        if path.exists() {
            let prev = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if RunConfig::parse(&prev)? != *cfg {
                return Err(Error::Config(format!(
                    "{} was created with a different configuration",
                    self.root.display()
                )));
            }
            return Ok(());
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Data(format!("missing {}; run `{producer}` first", path.display())))
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        self.require(&self.manifests().join("subjects.json"), "corpus build")?;
        Corpus::load(&self.manifests())
    }

    pub fn load_comparator(&self) -> Result<ComparatorBackend> {
        self.require(&self.comparator(), "train")?;
        ComparatorBackend::load(&self.comparator())
    }

    pub fn load_translator(&self) -> Result<TranslatorModel> {
        self.require(&self.translator(), "train")?;
        translator::load(&self.translator())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn corpus_build(cfg: &RunConfig, run: &RunDir) -> Result<Corpus> {
    run.echo(cfg)?;
    let corpus = build_corpus(&cfg.corpus)?;
    corpus.persist(&run.manifests())?;
    info!(
        "corpus: {} train, {} calibration, {} test pairs",
        corpus.train.pairs.len(),
        corpus.calibration.pairs.len(),
        corpus.test.pairs.len()
    );
    Ok(corpus)
}

/// Fits the comparator and the translator.
pub fn train(cfg: &RunConfig, run: &RunDir) -> Result<(ComparatorBackend, TranslatorModel)> {
    run.echo(cfg)?;
    let corpus = run.load_corpus()?;
    let backend = cfg.comparator.build(&corpus)?;
    run.ensure(&run.checkpoints())?;
    backend.save(&run.comparator())?;
    let utility = calibrate_utility(&backend, &corpus.calibration)?;
    write(&run.report().join("utility.tsv"), &utility.to_tsv())?;
    info!("comparator: TMR@FMR=1% {:?}", utility.tmr_at(0.01));
    let options = TrainOptions {
        checkpoint_dir: Some(run.translator_dir()),
        log_path: Some(run.logs().join("train_log.tsv")),
    };
    run.ensure(&run.logs())?;
    let model = translator::train(&corpus.train.training_view(), &cfg.translator, &options)?.model;
    info!("translator: {} epochs, checksum {}", model.epoch_trained, model.checksum());
    Ok((backend, model))
}

/// Calibration-split threshold, unless the config fixes one.
pub fn threshold(cfg: &RunConfig, model: &TranslatorModel, backend: &ComparatorBackend, corpus: &Corpus) -> Result<f64> {
    if let Some(t) = cfg.detector.threshold {
        return Ok(t);
    }
    let det = DetectorConfig {
        threshold: 0.5,
        translate_seed: cfg.detector.translate_seed,
    };
    let scores = corpus
        .calibration
        .pairs
        .iter()
        .filter(|p| p.label == Label::Bonafide)
        .map(|p| Ok(detector::score_pair(model, backend, p, det.pair_seed(&p.pair_id))?.after.value))
        .collect::<Result<Vec<f64>>>()?;
    calibrate_threshold(&scores, cfg.detector.target_bpcer)
}

pub fn detect(cfg: &RunConfig, run: &RunDir) -> Result<Vec<Decision>> {
    run.echo(cfg)?;
    let corpus = run.load_corpus()?;
    let backend = run.load_comparator()?;
    let model = run.load_translator()?;
    let t = threshold(cfg, &model, &backend, &corpus)?;
    write(
        &run.logs().join("threshold.tsv"),
        &format!("threshold\t{t}\ntarget_bpcer\t{}\n", cfg.detector.target_bpcer),
    )?;
    let det = DetectorConfig {
        threshold: t,
        translate_seed: cfg.detector.translate_seed,
    };
    let decisions = detector::detect_all(&model, &backend, &corpus.test, &det)?;
    detector::write_decision_log(&decisions, &run.decisions())?;
    info!("detect: {} decisions at threshold {t}", decisions.len());
    Ok(decisions)
}

fn by_attack(decisions: &[Decision], attack: AttackKind) -> Vec<Decision> {
    decisions
        .iter()
        .filter(|d| matches!(d.attack_kind, Some(AttackKind::None) | None) || d.attack_kind == Some(attack))
        .cloned()
        .collect()
}

/// Report over all test pairs in `report/all`, and per attack kind in
/// `report/<attack>`.
pub fn eval(cfg: &RunConfig, run: &RunDir) -> Result<Vec<(String, EvalReport)>> {
    run.echo(cfg)?;
    run.require(&run.decisions(), "detect")?;
    let decisions = detector::read_decision_log(&run.decisions())?;
    let corpus = run.load_corpus()?;
    let mut out = Vec::new();
    let all = build_report(&decisions, Some(pearson_diag(&corpus.test)?))?;
    all.persist(&run.report().join("all"))?;
    out.push(("all".to_string(), all));
    for &attack in &cfg.corpus.test_attacks {
        let rows = by_attack(&decisions, attack);
        let data = corpus.test.restrict_attack(attack);
        let r = build_report(&rows, Some(pearson_diag(&data)?))?;
        r.persist(&run.report().join(attack.as_str()))?;
        out.push((attack.as_str().to_string(), r));
    }
    Ok(out)
}

/// Translator trained on morphs of `attack`: the main checkpoint when the
/// corpus already trains on it, otherwise one fitted on a corpus variant.
fn translator_for(cfg: &RunConfig, run: &RunDir, attack: AttackKind) -> Result<TranslatorModel> {
    if attack == cfg.corpus.train_attack {
        if run.translator().exists() {
            return run.load_translator();
        }
        let corpus = run.load_corpus()?;
        return Ok(translator::train(&corpus.train.training_view(), &cfg.translator, &TrainOptions::in_dir(&run.translator_dir()))?.model);
    }
    let dir = run.checkpoints().join(format!("cross_{}", attack.as_str()));
    let path = dir.join("final.ckpt");
    if path.exists() {
        let m = translator::load(&path)?;
        if m.config == cfg.translator && m.epoch_trained == cfg.translator.epochs {
            return Ok(m);
        }
    }
    let variant = build_corpus(&crate::corpus::CorpusConfig {
        train_attack: attack,
        ..cfg.corpus.clone()
    })?;
    info!("cross-eval: training on {}", attack.as_str());
    Ok(translator::train(&variant.train.training_view(), &cfg.translator, &TrainOptions::in_dir(&dir))?.model)
}

pub fn cross_eval(cfg: &RunConfig, run: &RunDir) -> Result<Vec<CrossCell>> {
    run.echo(cfg)?;
    let corpus = run.load_corpus()?;
    let backend = run.load_comparator()?;
    let mut cells = Vec::new();
    for &train_attack in &cfg.cross_eval.train_attacks {
        let model = translator_for(cfg, run, train_attack)?;
        let t = threshold(cfg, &model, &backend, &corpus)?;
        let det = DetectorConfig {
            threshold: t,
            translate_seed: cfg.detector.translate_seed,
        };
        let decisions = detector::detect_all(&model, &backend, &corpus.test, &det)?;
        for &test_attack in &cfg.cross_eval.test_attacks {
            let r = build_report(&by_attack(&decisions, test_attack), None)?;
            let s = r
                .after
                .as_ref()
                .ok_or_else(|| Error::Data(format!("no {} morphs in the test split", test_attack.as_str())))?;
            cells.push(CrossCell {
                train: train_attack,
                test: test_attack,
                bpcer_at_apcer10: s.bpcer_at_apcer10.reported_metric,
                apcer_at_bpcer10: s.apcer_at_bpcer10.reported_metric,
                roc_auc: s.roc_auc,
            });
        }
    }
    let mut detail = String::from("train\ttest\tbpcer_at_apcer10\tapcer_at_bpcer10\troc_auc\n");
    for c in &cells {
        let _ = writeln!(
            detail,
            "{}\t{}\t{}\t{}\t{}",
            c.train.as_str(),
            c.test.as_str(),
            c.bpcer_at_apcer10,
            c.apcer_at_bpcer10,
            c.roc_auc
        );
    }
    write(&run.report().join("cross_eval.tsv"), &cross_matrix_text(&cells))?;
    write(&run.report().join("cross_eval_cells.tsv"), &detail)?;
    Ok(cells)
}

/// Trains the demorpher, scores recovery on the test morphs and writes
/// saliency maps.
pub fn demorph(cfg: &RunConfig, run: &RunDir) -> Result<demorph::RecoveryReport> {
    run.echo(cfg)?;
    let corpus = run.load_corpus()?;
    let backend = run.load_comparator()?;
    let train_pairs = demorph::make_difference_pairs(&corpus.train)?;
    let options = TrainOptions {
        checkpoint_dir: Some(run.demorph_dir()),
        log_path: Some(run.logs().join("demorph_train_log.tsv")),
    };
    run.ensure(&run.logs())?;
    let model = demorph::train_demorpher(
        &demorph::training_pairs(&train_pairs, cfg.demorph.include_bonafide),
        &cfg.demorph.translator,
        &options,
    )?
    .model;
    let test_pairs = demorph::make_difference_pairs(&corpus.test)?;
    let gallery = Gallery::enroll(&corpus, &corpus.test.subjects())?;
    // Recovery is measured on the attack the demorpher was trained on.
    let attack = corpus.config.train_attack;
    let recovery_pairs: Vec<_> = test_pairs.iter().filter(|p| p.attack_kind == attack).cloned().collect();
    let (report, _) = demorph::assess_recovery(&model, &backend, &recovery_pairs, &gallery, cfg.demorph.seed)?;
    let dir = run.report().join("demorph");
    let heat_dir = dir.join("heatmaps");
    run.ensure(&heat_dir)?;
    report.write(&dir.join("recovery.tsv"))?;

    let mut table = format!("{}\n", demorph::SALIENCY_COLUMNS);
    let mut written = [0usize; 2];
    for (p, rec) in test_pairs.iter().zip(&corpus.test.pairs) {
        let s = demorph::saliency_heatmap(
            &rec.document,
            &rec.reference,
            &backend,
            cfg.demorph.saliency_window,
            cfg.demorph.saliency_stride,
        )?;
        table.push_str(&demorph::saliency_row(&p.pair_id, p.label, &s));
        table.push('\n');
        let k = usize::from(p.label == Label::Morphed);
        if written[k] < cfg.demorph.heatmaps_per_class {
            written[k] += 1;
            s.heat_image().save_png(&heat_dir.join(format!("{}_heat.png", p.pair_id)))?;
            s.magnitude_image().save_png(&heat_dir.join(format!("{}_diff.png", p.pair_id)))?;
            p.source.save_png(&heat_dir.join(format!("{}_source.png", p.pair_id)))?;
        }
    }
    write(&dir.join("saliency.tsv"), &table)?;
    info!(
        "demorph: TMR second {} anchor {} gain {}",
        report.tmr_second_at_fmr1, report.tmr_anchor_at_fmr1, report.relative_gain
    );
    Ok(report)
}
