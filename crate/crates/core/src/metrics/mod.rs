//! Evaluation mathematics: error rates, operating points, dispersion and
//! correlation diagnostics, verification rates.

mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub use report::{build_report, cross_matrix_text, load_report_metrics, CrossCell, EvalReport, Histogram, REPORT_SCHEMA_VERSION};

/// Sentinel above every valid score, so that "accept nothing" is a candidate.
pub const ABOVE_ONE: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Before,
    After,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Before => "before",
            Stage::After => "after",
        }
    }
}

/// Comparator scores of one stage split by ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub bonafide: Vec<f64>,
    pub morphed: Vec<f64>,
    pub stage: Stage,
}

impl ScoreSet {
    pub fn new(bonafide: Vec<f64>, morphed: Vec<f64>, stage: Stage) -> Result<Self> {
        for &v in bonafide.iter().chain(&morphed) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!("score {v} outside [0, 1]")));
            }
        }
        Ok(ScoreSet { bonafide, morphed, stage })
    }
}

fn non_empty(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Data(format!("{what} score list is empty")));
    }
    Ok(())
}

/// Fraction of morphed scores accepted as bonafide (score ≥ threshold).
pub fn apcer(morphed: &[f64], threshold: f64) -> Result<f64> {
    non_empty(morphed, "morphed")?;
    Ok(morphed.iter().filter(|&&s| s >= threshold).count() as f64 / morphed.len() as f64)
}

/// Fraction of bonafide scores rejected as morphed (score < threshold).
pub fn bpcer(bonafide: &[f64], threshold: f64) -> Result<f64> {
    non_empty(bonafide, "bonafide")?;
    Ok(bonafide.iter().filter(|&&s| s < threshold).count() as f64 / bonafide.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Fix APCER, report BPCER.
    Apcer(f64),
    /// Fix BPCER, report APCER.
    Bpcer(f64),
}

impl Anchor {
    pub const APCER10: Anchor = Anchor::Apcer(0.10);
    pub const BPCER10: Anchor = Anchor::Bpcer(0.10);

    pub fn target(self) -> f64 {
        match self {
            Anchor::Apcer(t) | Anchor::Bpcer(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub achieved_anchor: f64,
    pub reported_metric: f64,
    pub threshold: f64,
    /// False when no candidate threshold meets the anchor target.
    pub attained: bool,
}

/// Sorted unique scores of both classes plus the two sentinels.
pub fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut c: Vec<f64> = scores.bonafide.iter().chain(&scores.morphed).copied().collect();
    c.push(0.0);
    c.push(ABOVE_ONE);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Number of entries of a sorted slice strictly below `t`.
fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s < t)
}

/// Threshold sweep: among candidates whose anchor metric does not exceed the
/// target, take the largest anchor value, breaking ties by the smallest
/// reported metric and then the smallest threshold.
pub fn operating_point(scores: &ScoreSet, anchor: Anchor) -> Result<OperatingPoint> {
    non_empty(&scores.bonafide, "bonafide")?;
    non_empty(&scores.morphed, "morphed")?;
    let mut bona = scores.bonafide.clone();
    let mut morph = scores.morphed.clone();
    bona.sort_by(f64::total_cmp);
    morph.sort_by(f64::total_cmp);
    let nb = bona.len() as f64;
    let nm = morph.len() as f64;
    let target = anchor.target();
    let mut best: Option<OperatingPoint> = None;
    let mut fallback: Option<OperatingPoint> = None;
    for t in candidate_thresholds(scores) {
        let a = (morph.len() - count_below(&morph, t)) as f64 / nm;
        let b = count_below(&bona, t) as f64 / nb;
        let (anc, rep) = match anchor {
            Anchor::Apcer(_) => (a, b),
            Anchor::Bpcer(_) => (b, a),
        };
        let cand = OperatingPoint {
            achieved_anchor: anc,
            reported_metric: rep,
            threshold: t,
            attained: anc <= target,
        };
        let better = |cur: &OperatingPoint| {
            cand.achieved_anchor > cur.achieved_anchor
                || (cand.achieved_anchor == cur.achieved_anchor && cand.reported_metric < cur.reported_metric)
        };
        if cand.attained {
            if best.as_ref().map_or(true, better) {
                best = Some(cand);
            }
        } else if fallback.as_ref().map_or(true, |cur| cand.achieved_anchor < cur.achieved_anchor) {
            fallback = Some(cand);
        }
    }
    Ok(best.or(fallback).expect("at least the sentinels are candidates"))
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    non_empty(values, "quantile input")?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Interquartile range with linearly interpolated quartiles.
pub fn iqr(values: &[f64]) -> Result<f64> {
    Ok(quantile(values, 0.75)? - quantile(values, 0.25)?)
}

/// Ratio that is `+inf` for a zero denominator and NaN for 0/0.
fn flagged_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrDispersion {
    pub ratio_morphed: f64,
    pub ratio_bonafide: f64,
    pub ratio_of_ratios: f64,
}

impl IqrDispersion {
    /// True when any ratio had a zero denominator.
    pub fn flagged(&self) -> bool {
        ![self.ratio_morphed, self.ratio_bonafide, self.ratio_of_ratios]
            .iter()
            .all(|r| r.is_finite())
    }
}

/// After-over-before IQR ratios per class, and their quotient.
pub fn iqr_dispersion(before: &ScoreSet, after: &ScoreSet) -> Result<IqrDispersion> {
    let rm = flagged_ratio(iqr(&after.morphed)?, iqr(&before.morphed)?);
    let rb = flagged_ratio(iqr(&after.bonafide)?, iqr(&before.bonafide)?);
    Ok(IqrDispersion {
        ratio_morphed: rm,
        ratio_bonafide: rb,
        ratio_of_ratios: if rm.is_finite() && rb.is_finite() { flagged_ratio(rm, rb) } else { f64::NAN },
    })
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonDiag {
    pub mean: f64,
    /// Population standard deviation over defined values.
    pub std: f64,
    pub values: Vec<(String, Option<f64>)>,
    pub undefined: usize,
}

/// Document/reference luma correlation per pair.
pub fn pearson_diag(data: &Dataset) -> Result<PearsonDiag> {
    let values: Vec<(String, Option<f64>)> = data
        .pairs
        .iter()
        .map(|p| {
            p.reference.ensure_shape(p.document.shape())?;
            Ok((p.pair_id.clone(), pearson(&p.document.luma(), &p.reference.luma())))
        })
        .collect::<Result<_>>()?;
    let defined: Vec<f64> = values.iter().filter_map(|v| v.1).collect();
    if defined.is_empty() {
        return Err(Error::Data("no pair has a defined correlation".into()));
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let std = (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PearsonDiag {
        mean,
        std,
        undefined: values.len() - defined.len(),
        values,
    })
}

/// Area under the curve traced by (APCER, 1 - BPCER) as the threshold sweeps
/// from above one down to zero, by the trapezoid rule.
pub fn roc_auc(scores: &ScoreSet) -> Result<f64> {
    non_empty(&scores.bonafide, "bonafide")?;
    non_empty(&scores.morphed, "morphed")?;
    let mut bona = scores.bonafide.clone();
    let mut morph = scores.morphed.clone();
    bona.sort_by(f64::total_cmp);
    morph.sort_by(f64::total_cmp);
    let mut area = 0.0;
    let mut prev = (0.0, 0.0);
    for t in candidate_thresholds(scores).into_iter().rev() {
        let x = (morph.len() - count_below(&morph, t)) as f64 / morph.len() as f64;
        let y = (bona.len() - count_below(&bona, t)) as f64 / bona.len() as f64;
        area += (x - prev.0) * (y + prev.1) / 2.0;
        prev = (x, y);
    }
    Ok(area)
}

/// Verification rate at a false-match-rate ceiling: the threshold is the
/// smallest candidate whose impostor acceptance (score ≥ t) does not exceed
/// `fmr`. `None` when either distribution is constant.
pub fn tmr_at_fmr(genuine: &[f64], impostor: &[f64], fmr: f64) -> Result<Option<(f64, f64)>> {
    non_empty(genuine, "genuine")?;
    non_empty(impostor, "impostor")?;
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(genuine) && constant(impostor) {
        return Ok(None);
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    let mut gen = genuine.to_vec();
    gen.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = imp.iter().chain(&gen).copied().collect();
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    for t in cands {
        let fm = (imp.len() - count_below(&imp, t)) as f64 / imp.len() as f64;
        if fm <= fmr {
            let tm = (gen.len() - count_below(&gen, t)) as f64 / gen.len() as f64;
            return Ok(Some((tm, t)));
        }
    }
    unreachable!("infinite threshold accepts nothing")
}

/// Equal-width histogram over [0, 1].
pub fn histogram_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for &v in values {
        let i = ((v * bins as f64).floor() as usize).min(bins - 1);
        h[i] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(b: &[f64], m: &[f64]) -> ScoreSet {
        ScoreSet::new(b.to_vec(), m.to_vec(), Stage::After).unwrap()
    }

    /// Exhaustive oracle: evaluates every candidate by direct counting.
    pub(crate) fn brute_operating_point(s: &ScoreSet, anchor: Anchor) -> (f64, f64, f64) {
        let mut cands: Vec<f64> = s.bonafide.iter().chain(&s.morphed).copied().collect();
        cands.extend([0.0, ABOVE_ONE]);
        let mut best: Option<(f64, f64, f64)> = None;
        for &t in &cands {
            let a = s.morphed.iter().filter(|&&v| v >= t).count() as f64 / s.morphed.len() as f64;
            let b = s.bonafide.iter().filter(|&&v| v < t).count() as f64 / s.bonafide.len() as f64;
            let (anc, rep) = if let Anchor::Apcer(_) = anchor { (a, b) } else { (b, a) };
            if anc > anchor.target() {
                continue;
            }
            let replace = match best {
                None => true,
                Some((ba, br, bt)) => anc > ba || (anc == ba && (rep < br || (rep == br && t < bt))),
            };
            if replace {
                best = Some((anc, rep, t));
            }
        }
        best.unwrap()
    }

    #[test]
    fn apcer_counts_scores_at_or_above() {
        assert_eq!(apcer(&[0.2, 0.4, 0.6, 0.8], 0.5).unwrap(), 0.5);
        assert_eq!(apcer(&[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(apcer(&[0.1, 0.2], 0.9).unwrap(), 0.0);
        assert_eq!(apcer(&[], 0.5).unwrap_err().kind(), "data");
    }

    #[test]
    fn bpcer_counts_scores_strictly_below() {
        assert!((bpcer(&[0.9, 0.7, 0.3], 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(bpcer(&[0.0, 0.4], 0.0).unwrap(), 0.0);
        assert_eq!(bpcer(&[0.1, 0.2], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn separated_sets_report_zero() {
        let s = set(&[0.8, 0.9, 0.95], &[0.1, 0.2, 0.3]);
        assert_eq!(operating_point(&s, Anchor::APCER10).unwrap().reported_metric, 0.0);
        assert_eq!(operating_point(&s, Anchor::BPCER10).unwrap().reported_metric, 0.0);
    }

    #[test]
    fn fixed_example_matches_oracle() {
        let s = set(
            &[0.9, 0.8, 0.7, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25],
            &[0.55, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1],
        );
        let op = operating_point(&s, Anchor::APCER10).unwrap();
        let (a, r, t) = brute_operating_point(&s, Anchor::APCER10);
        assert_eq!((op.achieved_anchor, op.reported_metric, op.threshold), (a, r, t));
        // by hand: at T = 0.55 only 0.55 is accepted among morphs; bonafides 0.5 and below are rejected
        assert_eq!((a, r, t), (0.1, 0.6, 0.55));
    }

    #[test]
    fn identical_classes_report_complement_of_anchor() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let s = set(&v, &v);
        let op = operating_point(&s, Anchor::APCER10).unwrap();
        assert!((op.reported_metric - 0.9).abs() <= 0.01 + 1e-12, "{op:?}");
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(), 1.75);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn iqr_identity_and_scaling() {
        let b = set(&[0.5, 0.6, 0.7, 0.9], &[0.3, 0.4, 0.45, 0.5]);
        let r = iqr_dispersion(&b, &b).unwrap();
        assert_eq!((r.ratio_morphed, r.ratio_bonafide, r.ratio_of_ratios), (1.0, 1.0, 1.0));
        let mean = 0.4;
        let spread: Vec<f64> = b.morphed.iter().map(|v| mean + 2.0 * (v - mean)).collect();
        let a = set(&b.bonafide, &spread);
        assert!((iqr_dispersion(&b, &a).unwrap().ratio_of_ratios - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iqr_is_flagged() {
        let b = set(&[0.5, 0.5], &[0.5, 0.5]);
        let a = set(&[0.4, 0.6], &[0.5, 0.5]);
        let r = iqr_dispersion(&b, &a).unwrap();
        assert!(r.flagged());
        assert!(r.ratio_bonafide.is_infinite());
    }

    #[test]
    fn pearson_self_and_affine() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| 0.5 * v + 0.2).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[0.2; 4]), None);
    }

    #[test]
    fn auc_of_separated_and_identical_sets() {
        assert_eq!(roc_auc(&set(&[0.8, 0.9], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(roc_auc(&set(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5);
    }

    #[test]
    fn tmr_degenerate_and_simple() {
        assert_eq!(tmr_at_fmr(&[1.0; 3], &[1.0; 5], 0.01).unwrap(), None);
        let (tmr, t) = tmr_at_fmr(&[0.9, 0.8, 0.3], &[0.1, 0.2, 0.5], 0.0).unwrap().unwrap();
        assert_eq!(t, 0.8);
        assert!((tmr - 2.0 / 3.0).abs() < 1e-15);
    }

    fn scores(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        // quantized values so that ties are common
        prop::collection::vec((0u32..=40).prop_map(|v| v as f64 / 40.0), n)
    }

    proptest! {
        #[test]
        fn operating_point_equals_exhaustive_oracle(b in scores(1..60), m in scores(1..60)) {
            let s = set(&b, &m);
            for anchor in [Anchor::APCER10, Anchor::BPCER10] {
                let op = operating_point(&s, anchor).unwrap();
                prop_assert_eq!((op.achieved_anchor, op.reported_metric, op.threshold), brute_operating_point(&s, anchor));
            }
        }

        #[test]
        fn error_rates_are_monotone_in_threshold(v in scores(1..50), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(apcer(&v, hi).unwrap() <= apcer(&v, lo).unwrap());
            prop_assert!(bpcer(&v, hi).unwrap() >= bpcer(&v, lo).unwrap());
        }

        #[test]
        fn auc_equals_pairwise_count(b in scores(1..30), m in scores(1..30)) {
            let mut wins = 0.0;
            for x in &b {
                for y in &m {
                    wins += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
                }
            }
            let expect = wins / (b.len() * m.len()) as f64;
            prop_assert!((roc_auc(&set(&b, &m)).unwrap() - expect).abs() < 1e-12);
        }

        #[test]
        fn iqr_ratios_invariant_to_shift_and_scale(
            v in prop::collection::vec(0.1f64..0.5, 16), shift in -0.05f64..0.05, scale in 0.5f64..1.5,
        ) {
            let before = set(&v[0..4], &v[4..8]);
            let after = set(&v[8..12], &v[12..16]);
            let tr = |s: &ScoreSet| set(
                &s.bonafide.iter().map(|x| x * scale + shift).collect::<Vec<_>>(),
                &s.morphed.iter().map(|x| x * scale + shift).collect::<Vec<_>>(),
            );
            let r0 = iqr_dispersion(&before, &after).unwrap();
            let r1 = iqr_dispersion(&tr(&before), &tr(&after)).unwrap();
            for (x, y) in [(r0.ratio_morphed, r1.ratio_morphed), (r0.ratio_bonafide, r1.ratio_bonafide)] {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0) || (x.is_nan() && y.is_nan()) || x == y);
            }
        }

        #[test]
        fn pearson_invariant_to_positive_affine(a in prop::collection::vec(0.0f64..1.0, 8), s in 0.1f64..3.0, o in -1.0f64..1.0) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let t: Vec<f64> = a.iter().map(|v| s * v + o).collect();
            if let (Some(p), Some(q)) = (pearson(&a, &b), pearson(&t, &b)) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn tmr_is_monotone_in_fmr(g in scores(1..30), i in scores(2..30)) {
            let fmrs = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0];
            let mut last = -1.0;
            for f in fmrs {
                if let Some((t, _)) = tmr_at_fmr(&g, &i, f).unwrap() {
                    prop_assert!(t >= last);
                    last = t;
                }
            }
        }
    }
}
