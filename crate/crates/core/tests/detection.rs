use cidmad::comparator::ComparatorBackend;
use cidmad::corpus::{build_corpus, CorpusConfig, Label};
use cidmad::detector::{detect_all, DetectorConfig, Verdict};
use cidmad::metrics::{apcer, bpcer, candidate_thresholds, ScoreSet, Stage};
use cidmad::translator::{train, TrainOptions, TranslatorConfig};

fn tiny() -> (cidmad::corpus::Corpus, TranslatorConfig) {
    let corpus = build_corpus(&CorpusConfig {
        subjects: 24,
        train_pairs_per_class: 6,
        test_bonafide_per_subject: 2,
        test_morphs_per_subject: 2,
        image_size: 32,
        ..CorpusConfig::default()
    })
    .unwrap();
    let cfg = TranslatorConfig {
        epochs: 2,
        base_channels: 4,
        disc_channels: 4,
        checkpoint_every: 0,
        ..TranslatorConfig::default()
    };
    (corpus, cfg)
}

#[test]
fn verdict_counts_match_the_metric_definitions_at_every_threshold() {
    let (corpus, cfg) = tiny();
    let model = train(&corpus.train.training_view(), &cfg, &TrainOptions::default()).unwrap().model;
    let backend = ComparatorBackend::PixelBaseline;
    let decisions = detect_all(&model, &backend, &corpus.test, &DetectorConfig::default()).unwrap();
    let scores = |label: Label| -> Vec<f64> {
        decisions.iter().filter(|d| d.label == Some(label)).map(|d| d.score.value).collect()
    };
    let set = ScoreSet::new(scores(Label::Bonafide), scores(Label::Morphed), Stage::After).unwrap();
    for t in candidate_thresholds(&set) {
        let re: Vec<_> = decisions.iter().map(|d| d.rethreshold(t)).collect();
        let frac = |label: Label, verdict: Verdict| {
            let of: Vec<_> = re.iter().filter(|d| d.label == Some(label)).collect();
            of.iter().filter(|d| d.verdict == verdict).count() as f64 / of.len() as f64
        };
        assert_eq!(frac(Label::Morphed, Verdict::NonMorphed), apcer(&set.morphed, t).unwrap());
        assert_eq!(frac(Label::Bonafide, Verdict::Morphed), bpcer(&set.bonafide, t).unwrap());
    }
}

#[test]
fn translation_seed_is_per_pair_and_reproducible() {
    let (corpus, cfg) = tiny();
    let model = train(&corpus.train.training_view(), &cfg, &TrainOptions::default()).unwrap().model;
    let backend = ComparatorBackend::PixelBaseline;
    let det = DetectorConfig::default();
    let a = detect_all(&model, &backend, &corpus.test, &det).unwrap();
    let b = detect_all(&model, &backend, &corpus.test, &det).unwrap();
    assert_eq!(a, b);
    // order of the pairs does not matter
    let mut shuffled = corpus.test.clone();
    shuffled.pairs.reverse();
    let mut c = detect_all(&model, &backend, &shuffled, &det).unwrap();
    c.reverse();
    assert_eq!(a, c);
}
