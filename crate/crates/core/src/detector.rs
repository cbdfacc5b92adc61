//! Differential morph decision: translate the document, compare the output
//! with the reference, threshold the score.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comparator::{ComparatorBackend, SimilarityScore};
use crate::corpus::{AttackKind, Dataset, Label, PairRecord};
use crate::error::{Error, Result};
use crate::metrics::Stage;
use crate::rng;
use crate::translator::TranslatorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Morphed,
    NonMorphed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Morphed => "morphed",
            Verdict::NonMorphed => "non_morphed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "morphed" => Ok(Verdict::Morphed),
            "non_morphed" => Ok(Verdict::NonMorphed),
            other => Err(Error::Parameter(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Morphed iff the score is strictly below the threshold; a tie is
/// non-morphed.
pub fn verdict(score: f64, threshold: f64) -> Verdict {
    if score < threshold {
        Verdict::Morphed
    } else {
        Verdict::NonMorphed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub threshold: f64,
    /// Base seed; each pair derives its own translation seed from it.
    pub translate_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 0.5,
            translate_seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn pair_seed(&self, pair_id: &str) -> u64 {
        rng::derive_seed(self.translate_seed, &[rng::tag(pair_id)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub pair_id: String,
    pub verdict: Verdict,
    pub score: SimilarityScore,
    pub score_before: SimilarityScore,
    pub threshold: f64,
    /// Ground truth, when known.
    pub label: Option<Label>,
    pub attack_kind: Option<AttackKind>,
}

impl Decision {
    /// Same decision under a different threshold.
    pub fn rethreshold(&self, threshold: f64) -> Decision {
        Decision {
            verdict: verdict(self.score.value, threshold),
            threshold,
            ..self.clone()
        }
    }
}

/// Per-pair comparator scores before and after translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub before: SimilarityScore,
    pub after: SimilarityScore,
}

pub fn score_pair(model: &TranslatorModel, backend: &ComparatorBackend, pair: &PairRecord, translate_seed: u64) -> Result<PairScores> {
    let out = model.translate(&pair.document, translate_seed)?;
    Ok(PairScores {
        after: backend.compare(&out, &pair.reference, Stage::After, &pair.pair_id)?,
        before: backend.compare(&pair.document, &pair.reference, Stage::Before, &pair.pair_id)?,
    })
}

pub fn detect(model: &TranslatorModel, backend: &ComparatorBackend, pair: &PairRecord, config: &DetectorConfig) -> Result<Decision> {
    config.validate()?;
    let s = score_pair(model, backend, pair, config.pair_seed(&pair.pair_id))?;
    Ok(Decision {
        pair_id: pair.pair_id.clone(),
        verdict: verdict(s.after.value, config.threshold),
        score: s.after,
        score_before: s.before,
        threshold: config.threshold,
        label: Some(pair.label),
        attack_kind: Some(pair.attack_kind),
    })
}

pub fn detect_all(model: &TranslatorModel, backend: &ComparatorBackend, data: &Dataset, config: &DetectorConfig) -> Result<Vec<Decision>> {
    data.pairs.iter().map(|p| detect(model, backend, p, config)).collect()
}

/// Largest threshold whose empirical BPCER on `bona_scores` stays within
/// `target_bpcer`.
pub fn calibrate_threshold(bona_scores: &[f64], target_bpcer: f64) -> Result<f64> {
    if bona_scores.is_empty() {
        return Err(Error::Data("no bonafide calibration scores".into()));
    }
    if !(0.0..=1.0).contains(&target_bpcer) {
        return Err(Error::Parameter(format!("target BPCER {target_bpcer} outside [0, 1]")));
    }
    let mut s = bona_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    // most scores allowed strictly below the threshold
    let allowed = (0..=n).rev().find(|&c| c as f64 / n as f64 <= target_bpcer).unwrap_or(0);
    Ok(if allowed >= n { 1.0 } else { s[allowed] })
}

const LOG_MAGIC: &str = "#cidmad-decisions version=1";
const LOG_COLUMNS: &str = "pair_id\tscore_before\tscore_after\tthreshold\tverdict\tlabel\tattack_kind";

pub fn decision_log_text(decisions: &[Decision]) -> String {
    let mut s = format!("{LOG_MAGIC}\n{LOG_COLUMNS}\n");
    for d in decisions {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.pair_id,
            d.score_before.value,
            d.score.value,
            d.threshold,
            d.verdict.as_str(),
            d.label.map_or("unknown", Label::as_str),
            d.attack_kind.map_or("unknown", AttackKind::as_str),
        );
    }
    s
}

pub fn parse_decision_log(text: &str) -> Result<Vec<Decision>> {
    let bad = |m: String| Error::Data(format!("decision log: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(LOG_MAGIC) {
        return Err(bad("missing header".into()));
    }
    if lines.next() != Some(LOG_COLUMNS) {
        return Err(bad("unexpected columns".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields in {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let id = f[0].to_string();
            Ok(Decision {
                score_before: SimilarityScore {
                    value: num(f[1])?,
                    stage: Stage::Before,
                    pair_id: id.clone(),
                },
                score: SimilarityScore {
                    value: num(f[2])?,
                    stage: Stage::After,
                    pair_id: id.clone(),
                },
                threshold: num(f[3])?,
                verdict: Verdict::parse(f[4])?,
                label: if f[5] == "unknown" { None } else { Some(Label::parse(f[5])?) },
                attack_kind: if f[6] == "unknown" { None } else { Some(AttackKind::parse(f[6])?) },
                pair_id: id,
            })
        })
        .collect()
}

pub fn write_decision_log(decisions: &[Decision], path: &Path) -> Result<()> {
    std::fs::write(path, decision_log_text(decisions)).map_err(|e| Error::io(path, e))
}

pub fn read_decision_log(path: &Path) -> Result<Vec<Decision>> {
    parse_decision_log(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_threshold_verdicts() {
        assert_eq!(verdict(0.30, 0.50), Verdict::Morphed);
        assert_eq!(verdict(0.50, 0.50), Verdict::NonMorphed);
    }

    #[test]
    fn calibration_examples() {
        // at 0.7 exactly one of four scores (0.6) is strictly below: 25%
        assert_eq!(calibrate_threshold(&[0.9, 0.8, 0.7, 0.6], 0.25).unwrap(), 0.7);
        assert_eq!(calibrate_threshold(&[0.9, 0.8, 0.7, 0.6], 0.0).unwrap(), 0.6);
        assert_eq!(calibrate_threshold(&[], 0.1).unwrap_err().kind(), "data");
    }

    #[test]
    fn decision_log_round_trips() {
        let d = Decision {
            pair_id: "p1".into(),
            verdict: Verdict::Morphed,
            score: SimilarityScore {
                value: 0.1 + 0.2,
                stage: Stage::After,
                pair_id: "p1".into(),
            },
            score_before: SimilarityScore {
                value: 1.0 / 3.0,
                stage: Stage::Before,
                pair_id: "p1".into(),
            },
            threshold: 0.5,
            label: Some(Label::Morphed),
            attack_kind: None,
        };
        let back = parse_decision_log(&decision_log_text(&[d.clone()])).unwrap();
        assert_eq!(back, vec![d]);
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..=20).prop_map(|v| v as f64 / 20.0), 1..40)
    }

    proptest! {
        #[test]
        fn calibrated_threshold_is_maximal_and_feasible(s in scores(), target in 0.0f64..1.0) {
            let t = calibrate_threshold(&s, target).unwrap();
            let bp = |t: f64| s.iter().filter(|&&v| v < t).count() as f64 / s.len() as f64;
            prop_assert!(bp(t) <= target);
            // any larger candidate threshold breaks the constraint
            for &c in s.iter().chain(&[1.0]) {
                if c > t {
                    prop_assert!(bp(c) > target);
                }
            }
        }

        #[test]
        fn raising_threshold_never_clears_a_morph(v in 0.0f64..1.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if verdict(v, lo) == Verdict::Morphed {
                prop_assert_eq!(verdict(v, hi), Verdict::Morphed);
            }
        }
    }
}
