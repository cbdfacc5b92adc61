use cidmad::comparator::{calibrate_utility, train_embedding, ComparatorBackend, EmbeddingConfig};
use cidmad::corpus::{build_corpus, CorpusConfig, Label};
use cidmad::demorph::saliency_heatmap;

#[test]
fn embedding_separates_subjects_on_the_default_corpus() {
    let corpus = build_corpus(&CorpusConfig::default()).unwrap();
    let backend = ComparatorBackend::Embedding(train_embedding(&corpus, &EmbeddingConfig::default()).unwrap());
    let rep = calibrate_utility(&backend, &corpus.test).unwrap();
    assert!(!rep.degenerate);
    let tmr = rep.tmr_at(0.01).unwrap();
    assert!(tmr >= 0.9, "TMR@FMR=1% {tmr}");
    assert!(rep.tmr_at(0.001).unwrap() <= tmr);

    // occluding a morph pair moves the score more than occluding a genuine one
    let energy = |label: Label| {
        let v: Vec<f64> = corpus
            .test
            .pairs
            .iter()
            .filter(|p| p.label == label)
            .take(40)
            .map(|p| saliency_heatmap(&p.document, &p.reference, &backend, 16, 8).unwrap().energy())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (m, b) = (energy(Label::Morphed), energy(Label::Bonafide));
    assert!(m > b, "morphed {m} bonafide {b}");
}
