//! Evaluation report assembly and the on-disk report bundle.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{histogram_counts, iqr, iqr_dispersion, median, operating_point, roc_auc, Anchor, IqrDispersion};
use super::{OperatingPoint, PearsonDiag, ScoreSet, Stage};
use crate::corpus::{AttackKind, Label};
use crate::detector::{decision_log_text, Decision};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub class: Label,
    pub stage: Stage,
    pub counts: Vec<usize>,
}

/// Summary statistics of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub bpcer_at_apcer10: OperatingPoint,
    pub apcer_at_bpcer10: OperatingPoint,
    pub roc_auc: f64,
    pub median_bonafide: f64,
    pub median_morphed: f64,
    pub iqr_bonafide: f64,
    pub iqr_morphed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// After-translation summary; `None` when ground truth is missing or a
    /// class is empty.
    pub after: Option<StageSummary>,
    pub before: Option<StageSummary>,
    pub iqr: Option<IqrDispersion>,
    pub pearson: Option<PearsonDiag>,
    pub histograms: Vec<Histogram>,
    pub per_pair_rows: Vec<Decision>,
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn bpcer_at_apcer10(&self) -> Option<f64> {
        self.after.as_ref().map(|s| s.bpcer_at_apcer10.reported_metric)
    }

    pub fn apcer_at_bpcer10(&self) -> Option<f64> {
        self.after.as_ref().map(|s| s.apcer_at_bpcer10.reported_metric)
    }

    pub fn score_set(&self, stage: Stage) -> Result<ScoreSet> {
        score_set(&self.per_pair_rows, stage)
    }
}

fn score_set(rows: &[Decision], stage: Stage) -> Result<ScoreSet> {
    let pick = |label: Label| -> Vec<f64> {
        rows.iter()
            .filter(|d| d.label == Some(label))
            .map(|d| match stage {
                Stage::Before => d.score_before.value,
                Stage::After => d.score.value,
            })
            .collect()
    };
    ScoreSet::new(pick(Label::Bonafide), pick(Label::Morphed), stage)
}

fn summarize(s: &ScoreSet) -> Result<StageSummary> {
    Ok(StageSummary {
        stage: s.stage,
        bpcer_at_apcer10: operating_point(s, Anchor::APCER10)?,
        apcer_at_bpcer10: operating_point(s, Anchor::BPCER10)?,
        roc_auc: roc_auc(s)?,
        median_bonafide: median(&s.bonafide)?,
        median_morphed: median(&s.morphed)?,
        iqr_bonafide: iqr(&s.bonafide)?,
        iqr_morphed: iqr(&s.morphed)?,
    })
}

/// Assembles every metric from a decision log and optional diagnostics.
pub fn build_report(decisions: &[Decision], pearson: Option<PearsonDiag>) -> Result<EvalReport> {
    let mut flags = Vec::new();
    let unlabelled = decisions.iter().filter(|d| d.label.is_none()).count();
    if unlabelled > 0 {
        flags.push(format!("{unlabelled} pairs without ground truth; excluded from operating points"));
    }
    let before = score_set(decisions, Stage::Before)?;
    let after = score_set(decisions, Stage::After)?;
    let mut histograms = Vec::new();
    for s in [&before, &after] {
        histograms.push(Histogram {
            class: Label::Bonafide,
            stage: s.stage,
            counts: histogram_counts(&s.bonafide, HISTOGRAM_BINS),
        });
        histograms.push(Histogram {
            class: Label::Morphed,
            stage: s.stage,
            counts: histogram_counts(&s.morphed, HISTOGRAM_BINS),
        });
    }
    let complete = !after.bonafide.is_empty() && !after.morphed.is_empty();
    if !complete {
        flags.push("operating points unavailable: a class has no labelled pairs".into());
    }
    let (sa, sb, iq) = if complete {
        let iq = iqr_dispersion(&before, &after)?;
        if iq.flagged() {
            flags.push("zero interquartile range in a ratio denominator".into());
        }
        (Some(summarize(&after)?), Some(summarize(&before)?), Some(iq))
    } else {
        (None, None, None)
    };
    if let Some(p) = &pearson {
        if p.undefined > 0 {
            flags.push(format!("{} pairs with undefined correlation", p.undefined));
        }
    }
    Ok(EvalReport {
        after: sa,
        before: sb,
        iqr: iq,
        pearson,
        histograms,
        per_pair_rows: decisions.to_vec(),
        flags,
    })
}

fn metric_rows(r: &EvalReport) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    let mut put = |k: &str, v: String| rows.push((k.to_string(), v));
    for s in [&r.after, &r.before].into_iter().flatten() {
        let p = s.stage.as_str();
        put(&format!("{p}.bpcer_at_apcer10"), s.bpcer_at_apcer10.reported_metric.to_string());
        put(&format!("{p}.bpcer_at_apcer10.achieved_apcer"), s.bpcer_at_apcer10.achieved_anchor.to_string());
        put(&format!("{p}.bpcer_at_apcer10.threshold"), s.bpcer_at_apcer10.threshold.to_string());
        put(&format!("{p}.apcer_at_bpcer10"), s.apcer_at_bpcer10.reported_metric.to_string());
        put(&format!("{p}.apcer_at_bpcer10.achieved_bpcer"), s.apcer_at_bpcer10.achieved_anchor.to_string());
        put(&format!("{p}.apcer_at_bpcer10.threshold"), s.apcer_at_bpcer10.threshold.to_string());
        put(&format!("{p}.roc_auc"), s.roc_auc.to_string());
        put(&format!("{p}.median_bonafide"), s.median_bonafide.to_string());
        put(&format!("{p}.median_morphed"), s.median_morphed.to_string());
        put(&format!("{p}.iqr_bonafide"), s.iqr_bonafide.to_string());
        put(&format!("{p}.iqr_morphed"), s.iqr_morphed.to_string());
    }
    if let Some(i) = &r.iqr {
        put("iqr_ratio_morphed", i.ratio_morphed.to_string());
        put("iqr_ratio_bonafide", i.ratio_bonafide.to_string());
        put("iqr_ratio_of_ratios", i.ratio_of_ratios.to_string());
    }
    if let Some(p) = &r.pearson {
        put("pearson_mean", p.mean.to_string());
        put("pearson_std", p.std.to_string());
        put("pearson_undefined", p.undefined.to_string());
    }
    put("pairs", r.per_pair_rows.len().to_string());
    for f in &r.flags {
        put("flag", f.clone());
    }
    rows
}

impl EvalReport {
    pub fn metrics_table(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in metric_rows(self) {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    /// Writes the report bundle into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write(
            "SCHEMA",
            format!(
                "cidmad-report schema_version={REPORT_SCHEMA_VERSION}\n\
                 quartiles: linear interpolation between order statistics, h = (n - 1) p\n\
                 apcer: fraction of morphed scores >= threshold\n\
                 bpcer: fraction of bonafide scores < threshold\n\
                 operating points: sweep over observed scores plus 0 and 1+1e-9; largest anchor <= target, ties to the smaller reported metric\n\
                 histograms: {HISTOGRAM_BINS} equal bins over [0, 1]\n"
            ),
        )?;
        write("metrics.tsv", self.metrics_table())?;
        let mut h = String::from("class\tstage\tbin_low\tbin_high\tcount\n");
        for hist in &self.histograms {
            for (i, c) in hist.counts.iter().enumerate() {
                let lo = i as f64 / HISTOGRAM_BINS as f64;
                let hi = (i + 1) as f64 / HISTOGRAM_BINS as f64;
                let _ = writeln!(h, "{}\t{}\t{lo}\t{hi}\t{c}", hist.class.as_str(), hist.stage.as_str());
            }
        }
        write("histograms.tsv", h)?;
        write("decisions.tsv", decision_log_text(&self.per_pair_rows))?;
        if let Some(p) = &self.pearson {
            let mut t = String::from("pair_id\tpearson\n");
            for (id, v) in &p.values {
                let _ = writeln!(t, "{id}\t{}", v.map_or("undefined".to_string(), |x| x.to_string()));
            }
            write("pearson.tsv", t)?;
        }
        write("score_histograms.svg", histogram_svg(&self.histograms))?;
        Ok(())
    }
}

/// Reads back `metrics.tsv` as key/value rows.
pub fn load_report_metrics(dir: &Path) -> Result<Vec<(String, String)>> {
    let p = dir.join("metrics.tsv");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Four panels: rows are stages, columns are classes.
fn histogram_svg(hists: &[Histogram]) -> String {
    let (pw, ph, pad) = (320.0, 200.0, 40.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        2.0 * (pw + pad) + pad,
        2.0 * (ph + pad) + pad
    );
    for (row, stage) in [Stage::Before, Stage::After].into_iter().enumerate() {
        for (col, class) in [Label::Bonafide, Label::Morphed].into_iter().enumerate() {
            let Some(h) = hists.iter().find(|h| h.stage == stage && h.class == class) else {
                continue;
            };
            let x0 = pad + col as f64 * (pw + pad);
            let y0 = pad + row as f64 * (ph + pad);
            let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
            let bw = pw / h.counts.len() as f64;
            let color = if class == Label::Bonafide { "#3b7dd8" } else { "#d8553b" };
            let _ = writeln!(
                s,
                "<text x=\"{x0}\" y=\"{}\">{} / {}</text>",
                y0 - 8.0,
                stage.as_str(),
                class.as_str()
            );
            let _ = writeln!(
                s,
                "<rect x=\"{x0}\" y=\"{y0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>"
            );
            for (i, &c) in h.counts.iter().enumerate() {
                let bh = ph * c as f64 / max;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                    x0 + i as f64 * bw,
                    y0 + ph - bh,
                    bw - 1.0,
                    bh
                );
            }
            let _ = writeln!(s, "<text x=\"{x0}\" y=\"{}\">0</text>", y0 + ph + 14.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">1</text>", x0 + pw - 6.0, y0 + ph + 14.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One train-attack × test-attack evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub train: AttackKind,
    pub test: AttackKind,
    pub bpcer_at_apcer10: f64,
    pub apcer_at_bpcer10: f64,
    pub roc_auc: f64,
}

/// Matrix with training attacks as rows and test attacks as columns; each
/// cell is `BPCER@APCER=10% / APCER@BPCER=10%` in percent.
pub fn cross_matrix_text(cells: &[CrossCell]) -> String {
    let mut trains: Vec<AttackKind> = Vec::new();
    let mut tests: Vec<AttackKind> = Vec::new();
    for c in cells {
        if !trains.contains(&c.train) {
            trains.push(c.train);
        }
        if !tests.contains(&c.test) {
            tests.push(c.test);
        }
    }
    let mut s = String::from("train\\test");
    for t in &tests {
        let _ = write!(s, "\t{}", t.as_str());
    }
    s.push('\n');
    for tr in &trains {
        s.push_str(tr.as_str());
        for te in &tests {
            match cells.iter().find(|c| c.train == *tr && c.test == *te) {
                Some(c) => {
                    let _ = write!(s, "\t{:.1}/{:.1}", 100.0 * c.bpcer_at_apcer10, 100.0 * c.apcer_at_bpcer10);
                }
                None => s.push_str("\t-"),
            }
        }
        s.push('\n');
    }
    s.push_str("\ntrain\ttest\tbpcer_at_apcer10\tapcer_at_bpcer10\troc_auc\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            c.train.as_str(),
            c.test.as_str(),
            c.bpcer_at_apcer10,
            c.apcer_at_bpcer10,
            c.roc_auc
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparator::SimilarityScore;
    use crate::detector::{parse_decision_log, verdict};

    fn row(id: usize, before: f64, after: f64, label: Option<Label>) -> Decision {
        let sc = |v: f64, stage| SimilarityScore {
            value: v,
            stage,
            pair_id: id.to_string(),
        };
        Decision {
            pair_id: id.to_string(),
            verdict: verdict(after, 0.5),
            score: sc(after, Stage::After),
            score_before: sc(before, Stage::Before),
            threshold: 0.5,
            label,
            attack_kind: None,
        }
    }

    fn rows() -> Vec<Decision> {
        (0..20)
            .map(|i| {
                let m = i % 2 == 1;
                let b = 0.6 + (i as f64) * 0.01;
                let a = if m { 0.3 + 0.01 * i as f64 } else { 0.8 + 0.005 * i as f64 };
                row(i, b, a, Some(if m { Label::Morphed } else { Label::Bonafide }))
            })
            .collect()
    }

    #[test]
    fn report_has_operating_points_and_four_histograms() {
        let r = build_report(&rows(), None).unwrap();
        assert_eq!(r.bpcer_at_apcer10(), Some(0.0));
        assert_eq!(r.histograms.len(), 4);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn empty_morph_class_is_flagged() {
        let only_bona: Vec<Decision> = rows().into_iter().filter(|d| d.label == Some(Label::Bonafide)).collect();
        let r = build_report(&only_bona, None).unwrap();
        assert!(r.after.is_none());
        assert!(r.flags.iter().any(|f| f.contains("operating points unavailable")));
    }

    #[test]
    fn missing_labels_omit_operating_points() {
        let unl: Vec<Decision> = rows().into_iter().map(|d| Decision { label: None, ..d }).collect();
        let r = build_report(&unl, None).unwrap();
        assert!(r.after.is_none());
        assert_eq!(r.per_pair_rows.len(), 20);
    }

    #[test]
    fn recomputation_from_persisted_log_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = build_report(&rows(), None).unwrap();
        r.persist(dir.path()).unwrap();
        let log = parse_decision_log(&std::fs::read_to_string(dir.path().join("decisions.tsv")).unwrap()).unwrap();
        let again = build_report(&log, None).unwrap();
        assert_eq!(again.metrics_table(), r.metrics_table());
        assert_eq!(load_report_metrics(dir.path()).unwrap().len(), r.metrics_table().lines().count() - 1);
        assert!(std::fs::read_to_string(dir.path().join("score_histograms.svg")).unwrap().starts_with("<svg"));
    }

    #[test]
    fn cross_matrix_has_train_rows_and_test_columns() {
        let kinds = [AttackKind::LandmarkMorph, AttackKind::AppearanceMorph];
        let cells: Vec<CrossCell> = kinds
            .iter()
            .flat_map(|&tr| {
                kinds.iter().map(move |&te| CrossCell {
                    train: tr,
                    test: te,
                    bpcer_at_apcer10: 0.1,
                    apcer_at_bpcer10: 0.2,
                    roc_auc: 0.9,
                })
            })
            .collect();
        let text = cross_matrix_text(&cells);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "train\\test\tlandmark_morph\tappearance_morph");
        assert_eq!(lines[1], "landmark_morph\t10.0/20.0\t10.0/20.0");
        assert_eq!(lines.len(), 3 + 1 + 1 + 4);
    }
}
