//! Confidence quality metrics.
//!
//! * ROC AUC over correctness labels via the Mann-Whitney rank sum, with
//!   average ranks for ties (ties count one half).
//! * Answerability-style F1: the best mean per-question credit over all
//!   thresholds, where a question whose confidence falls below the threshold
//!   is answered with "no answer".
//! * A paired randomization (sign-flip) test on the difference of either
//!   metric between two confidence scorers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::LabeledExample;

pub const DEFAULT_ROUNDS: usize = 10_000;
pub const MIN_ROUNDS: usize = 100;
/// Slack when comparing a permuted difference against the observed one, so
/// that mathematically equal differences are counted despite rounding.
const DELTA_TOLERANCE: f64 = 1e-12;

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("score {s} is not finite")));
    }
    Ok(())
}

fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve, `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_scores(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let idx = order_by_score(scores);
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = idx[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// AUC restricted to the examples where `mask` is true.
pub fn subset_auc(scores: &[f64], labels: &[bool], mask: &[bool]) -> Result<f64> {
    if mask.len() != scores.len() {
        return Err(Error::Metric(format!(
            "{} mask entries for {} scores",
            mask.len(),
            scores.len()
        )));
    }
    let (s, l): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&s, &l), _)| (s, l))
        .unzip();
    roc_auc(&s, &l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_real")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with one point per distinct score (predict positive when
/// `score >= threshold`), preceded by `(0, 0)` at `+inf`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_scores(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Metric("ROC needs both positive and negative labels".into()));
    }
    let mut idx = order_by_score(scores);
    idx.reverse();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < idx.len() {
        let t = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == t {
            if labels[idx[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
        });
    }
    Ok(points)
}

pub fn write_roc_csv<W: Write>(mut w: W, points: &[RocPoint]) -> Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(w, "{},{},{}", format_extended(p.threshold), p.fpr, p.tpr)?;
    }
    Ok(())
}

fn format_extended(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Per-question credit when the answer is emitted vs. withheld.
fn credits(l: &LabeledExample) -> (f64, f64) {
    (l.match_credit, if l.answerable { 0.0 } else { 1.0 })
}

/// Best mean credit over thresholds `{-inf} ∪ scores ∪ {+inf}` and the
/// smallest threshold that reaches it. An answer is emitted when
/// `score >= threshold`.
pub fn best_f1(scores: &[f64], labeled: &[LabeledExample]) -> Result<(f64, f64)> {
    if scores.len() != labeled.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} examples",
            scores.len(),
            labeled.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Metric("best_f1 of an empty set".into()));
    }
    check_scores(scores)?;
    let n = scores.len() as f64;
    let idx = order_by_score(scores);

    // At t = -inf everything is emitted. Raising t past a group of equal
    // scores flips that group from emitted to withheld.
    let mut total: f64 = labeled.iter().map(|l| credits(l).0).sum();
    let mut best = (total / n, f64::NEG_INFINITY);
    let mut k = 0;
    while k < idx.len() {
        let t = scores[idx[k]];
        let group_start = k;
        while k < idx.len() && scores[idx[k]] == t {
            k += 1;
        }
        // threshold t: the group at t is still emitted, lower groups withheld
        let f1_at_t = total / n;
        if f1_at_t > best.0 {
            best = (f1_at_t, t);
        }
        for &i in &idx[group_start..k] {
            let (emit, withhold) = credits(&labeled[i]);
            total += withhold - emit;
        }
    }
    if total / n > best.0 {
        best = (total / n, f64::INFINITY);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Auc,
    F1,
}

impl MetricKind {
    pub fn compute(self, scores: &[f64], labeled: &[LabeledExample]) -> Result<f64> {
        match self {
            MetricKind::Auc => {
                let labels: Vec<bool> = labeled.iter().map(|l| l.label).collect();
                roc_auc(scores, &labels)
            }
            MetricKind::F1 => best_f1(scores, labeled).map(|(f, _)| f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub metric: MetricKind,
    /// metric(A) - metric(B)
    pub observed_delta: f64,
    pub p_value: f64,
    pub rounds: usize,
    pub seed: u64,
}

/// Average ranks scaled to (0, 1]. Ties share their mean rank, so ordering
/// and ties are kept exactly.
pub fn rank_normalize(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let order = order_by_score(scores);
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid / n as f64;
        }
        start = end;
    }
    ranks
}

/// Two-sided paired randomization test. Both metrics only see the order of
/// scores, so each system's scores are first replaced by their normalized
/// ranks; this keeps swapped values on a common scale when the systems'
/// raw scores are not. Each round swaps the two systems'
/// scores on every example independently with probability 1/2; the p-value
/// is `(1 + #{|delta*| >= |delta|}) / (rounds + 1)`. Round `r` draws from
/// stream `r` of a ChaCha generator seeded with `seed`, so the result does
/// not depend on evaluation order.
pub fn paired_randomization_test(
    metric: MetricKind,
    scores_a: &[f64],
    scores_b: &[f64],
    labeled: &[LabeledExample],
    rounds: usize,
    seed: u64,
) -> Result<RandomizationResult> {
    if scores_a.len() != scores_b.len() || scores_a.len() != labeled.len() {
        return Err(Error::Metric(format!(
            "misaligned inputs: {} / {} scores for {} examples",
            scores_a.len(),
            scores_b.len(),
            labeled.len()
        )));
    }
    if rounds < MIN_ROUNDS {
        return Err(Error::Metric(format!(
            "at least {MIN_ROUNDS} rounds required, got {rounds}"
        )));
    }
    check_scores(scores_a)?;
    check_scores(scores_b)?;
    let scores_a = &rank_normalize(scores_a);
    let scores_b = &rank_normalize(scores_b);
    let observed = metric.compute(scores_a, labeled)? - metric.compute(scores_b, labeled)?;

    let exceed: Vec<bool> = (0..rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(round as u64);
            let mut a = scores_a.to_vec();
            let mut b = scores_b.to_vec();
            for i in 0..a.len() {
                if rng.random::<bool>() {
                    std::mem::swap(&mut a[i], &mut b[i]);
                }
            }
            let delta = metric.compute(&a, labeled)? - metric.compute(&b, labeled)?;
            Ok(delta.abs() >= observed.abs() - DELTA_TOLERANCE)
        })
        .collect::<Result<_>>()?;
    let count = exceed.iter().filter(|&&e| e).count();
    Ok(RandomizationResult {
        metric,
        observed_delta: observed,
        p_value: (1 + count) as f64 / (rounds + 1) as f64,
        rounds,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub n_answerable: usize,
    pub auc_full: f64,
    /// `None` when the answerable subset holds a single class.
    pub auc_answerable: Option<f64>,
    pub best_f1: f64,
    #[serde(with = "extended_real")]
    pub best_threshold: f64,
    pub roc_points: Vec<RocPoint>,
}

pub fn evaluate(scores: &[f64], labeled: &[LabeledExample]) -> Result<EvalReport> {
    let labels: Vec<bool> = labeled.iter().map(|l| l.label).collect();
    let mask: Vec<bool> = labeled.iter().map(|l| l.answerable).collect();
    let auc_full = roc_auc(scores, &labels)?;
    let auc_answerable = match subset_auc(scores, &labels, &mask) {
        Ok(v) => Some(v),
        Err(Error::Metric(_)) => None,
        Err(e) => return Err(e),
    };
    let (best_f1, best_threshold) = best_f1(scores, labeled)?;
    Ok(EvalReport {
        n_examples: labeled.len(),
        n_answerable: mask.iter().filter(|&&m| m).count(),
        auc_full,
        auc_answerable,
        best_f1,
        best_threshold,
        roc_points: roc_points(scores, &labels)?,
    })
}

/// JSON has no infinities; `±inf` thresholds are written as the strings
/// `"inf"` / `"-inf"`.
pub mod extended_real {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_extended(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(D::Error::custom(format!("invalid threshold `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ex(label: bool, answerable: bool, credit: f64) -> LabeledExample {
        LabeledExample {
            example_id: String::new(),
            label,
            answerable,
            match_credit: credit,
        }
    }

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::Metric(_))));
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(Error::Metric(_))));
        assert!(matches!(
            roc_auc(&[f64::NAN, 0.2], &[true, false]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn subset_auc_cases() {
        let s = [0.9, 0.8, 0.3, 0.1, 0.5];
        let l = [true, false, true, false, false];
        assert_eq!(subset_auc(&s, &l, &[true; 5]).unwrap(), roc_auc(&s, &l).unwrap());
        assert_eq!(subset_auc(&s, &l, &[true, false, false, true, false]).unwrap(), 1.0);
        assert!(subset_auc(&s, &l, &[true, false, true, false, false]).is_err());
    }

    #[test]
    fn random_subset_auc_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        let mask: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.8)).collect();
        let auc = subset_auc(&scores, &labels, &mask).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "auc = {auc}");
        let (s, l): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(&labels)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((&s, &l), _)| (s, l))
            .unzip();
        assert_eq!(auc, brute_auc(&s, &l));
    }

    #[test]
    fn roc_points_are_monotone_and_anchored() {
        let pts = roc_points(&[0.9, 0.7, 0.7, 0.2, 0.1], &[true, false, true, false, true]).unwrap();
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(pts.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        assert_eq!(pts.len(), 5);
        let mut csv = Vec::new();
        write_roc_csv(&mut csv, &pts).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("threshold,fpr,tpr\ninf,0,0\n0.9,0,"));
    }

    #[test]
    fn best_f1_all_correct() {
        let labeled = vec![ex(true, true, 1.0), ex(true, true, 1.0)];
        assert_eq!(best_f1(&[0.3, 0.7], &labeled).unwrap(), (1.0, f64::NEG_INFINITY));
    }

    #[test]
    fn best_f1_prefers_abstaining_on_both() {
        // emit both: (0.4 + 0) / 2 = 0.2; withhold both: (0 + 1) / 2 = 0.5;
        // withhold only the 0.8 one: (0.4 + 1) / 2 = 0.7
        let labeled = vec![ex(false, true, 0.4), ex(false, false, 0.0)];
        let (f, t) = best_f1(&[0.9, 0.8], &labeled).unwrap();
        assert!((f - 0.7).abs() < 1e-15);
        assert_eq!(t, 0.9);
        // with the order reversed, withholding everything wins
        let (f, t) = best_f1(&[0.8, 0.9], &labeled).unwrap();
        assert_eq!((f, t), (0.5, f64::INFINITY));
    }

    #[test]
    fn best_f1_all_unanswerable() {
        let labeled = vec![ex(false, false, 0.0), ex(false, false, 0.0)];
        assert_eq!(best_f1(&[0.2, 0.4], &labeled).unwrap(), (1.0, f64::INFINITY));
    }

    #[test]
    fn randomization_identical_systems() {
        let labeled: Vec<_> = (0..30).map(|i| ex(i % 3 == 0, true, 1.0)).collect();
        let s: Vec<f64> = (0..30).map(|i| (i * 7 % 11) as f64).collect();
        let r = paired_randomization_test(MetricKind::Auc, &s, &s, &labeled, 200, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        let c = vec![0.5; 30];
        let r = paired_randomization_test(MetricKind::F1, &c, &c, &labeled, 100, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn randomization_errors() {
        let labeled = vec![ex(true, true, 1.0), ex(false, true, 0.0)];
        assert!(paired_randomization_test(MetricKind::Auc, &[0.1, 0.2], &[0.1], &labeled, 100, 0).is_err());
        assert!(paired_randomization_test(MetricKind::Auc, &[0.1, 0.2], &[0.1, 0.3], &labeled, 99, 0).is_err());
    }

    #[test]
    fn randomization_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labeled: Vec<_> = (0..40).map(|_| ex(rng.random(), true, 1.0)).collect();
        let a: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let r1 = paired_randomization_test(MetricKind::Auc, &a, &b, &labeled, 500, 9).unwrap();
        let r2 = paired_randomization_test(MetricKind::Auc, &a, &b, &labeled, 500, 9).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.p_value > 0.0 && r1.p_value <= 1.0);
    }

    #[test]
    fn report_serializes_infinite_thresholds() {
        let labeled = vec![ex(true, true, 1.0), ex(false, true, 0.0), ex(true, false, 1.0)];
        let r = evaluate(&[0.9, 0.2, 0.5], &labeled).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"threshold\":\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.n_answerable, 2);
        assert_eq!(r.auc_answerable, Some(1.0));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            data in prop::collection::vec((0u8..8, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_of_negated_scores_is_complement(
            data in prop::collection::btree_map(any::<i32>(), any::<bool>(), 2..50)
        ) {
            let scores: Vec<f64> = data.keys().map(|&k| k as f64).collect();
            let labels: Vec<bool> = data.values().copied().collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn best_f1_is_invariant_to_increasing_maps(
            data in prop::collection::vec((0u8..10, any::<bool>(), 0u8..5), 1..25)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _, _)| *s as f64).collect();
            let labeled: Vec<_> = data
                .iter()
                .map(|(_, a, c)| ex(false, *a, *c as f64 / 4.0))
                .collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp()).collect();
            let (f1, t1) = best_f1(&scores, &labeled).unwrap();
            let (f2, t2) = best_f1(&mapped, &labeled).unwrap();
            prop_assert_eq!(f1, f2);
            if t1.is_finite() {
                prop_assert_eq!((t1 / 3.0).exp(), t2);
            } else {
                prop_assert_eq!(t1, t2);
            }
        }
    }
}
