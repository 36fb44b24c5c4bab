//! Metric-vs-human alignment protocols: per-group pair subsetting,
//! pairwise accuracy with consensus filtering, failure-complement sets,
//! quintuplet Spearman correlation, misalignment rates, and the
//! best-per-quintuplet gold standard.
//!
//! All comparisons consume *normalized* scores (higher means preferred);
//! polarity flips happen at the scorer boundary.

use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::{Label, PairRecord, Quintuplet};
use crate::util::{derive_seed, rng_from_seed};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no pairs left after filtering")]
    EmptyAfterFiltering,
    #[error("score list length {scores} does not match record count {records}")]
    LengthMismatch { scores: usize, records: usize },
    #[error("no quintuplet has the label pair needed for either rate")]
    NoEligibleQuintuplets,
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub scorer_name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy_pct: f64,
    pub excluded_no_consensus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisalignmentReport {
    pub positive_rate: f64,
    pub negative_rate: f64,
    pub pm_denominator: usize,
    pub nm_denominator: usize,
    pub mean_spearman: f64,
    pub degenerate_count: usize,
}

/// Draw `per_group` pairs per unordered model comparison, uniformly without
/// replacement; smaller groups contribute all members. Each group's
/// generator is seeded from (seed, group_key) so the result is independent
/// of group enumeration order. Output order: group key lexicographic, then
/// draw order.
pub fn phase1_subset(pairs: &[PairRecord], per_group: usize, seed: u64) -> Vec<PairRecord> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, p) in pairs.iter().enumerate() {
        groups.entry(p.group_key()).or_default().push(idx);
    }
    let mut out = Vec::new();
    for (key, members) in groups {
        if members.len() <= per_group {
            out.extend(members.into_iter().map(|i| pairs[i].clone()));
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, &key));
        let mut indices = members;
        // Partial Fisher-Yates: the first per_group slots are the draw.
        for i in 0..per_group {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        out.extend(indices[..per_group].iter().map(|&i| pairs[i].clone()));
    }
    out
}

fn human_prefers_b(fraction: f64) -> Option<bool> {
    if fraction > 0.5 {
        Some(true)
    } else if fraction < 0.5 {
        Some(false)
    } else {
        None // no consensus
    }
}

/// Fraction of pairs where the metric prefers the same image as the humans.
///
/// No-consensus pairs (fraction exactly 0.5) are excluded when
/// `consensus_only`, otherwise kept in the total and scored incorrect.
/// Exact metric score ties count as incorrect.
pub fn pairwise_accuracy(
    pairs: &[PairRecord],
    scores_a: &[f64],
    scores_b: &[f64],
    consensus_only: bool,
    scorer_name: &str,
) -> Result<AccuracyReport, AnalysisError> {
    if scores_a.len() != pairs.len() || scores_b.len() != pairs.len() {
        return Err(AnalysisError::LengthMismatch {
            scores: scores_a.len().min(scores_b.len()),
            records: pairs.len(),
        });
    }
    let mut correct = 0;
    let mut total = 0;
    let mut excluded = 0;
    for (i, pair) in pairs.iter().enumerate() {
        match human_prefers_b(pair.human_second_fraction) {
            Some(prefers_b) => {
                total += 1;
                let metric_prefers_b = if scores_b[i] > scores_a[i] {
                    Some(true)
                } else if scores_a[i] > scores_b[i] {
                    Some(false)
                } else {
                    None // tie: incorrect by decision
                };
                if metric_prefers_b == Some(prefers_b) {
                    correct += 1;
                }
            }
            None => {
                if consensus_only {
                    excluded += 1;
                } else {
                    total += 1; // counted, cannot be correct
                }
            }
        }
    }
    if total == 0 {
        return Err(AnalysisError::EmptyAfterFiltering);
    }
    Ok(AccuracyReport {
        scorer_name: scorer_name.to_string(),
        correct,
        total,
        accuracy_pct: 100.0 * correct as f64 / total as f64,
        excluded_no_consensus: excluded,
    })
}

/// The pairs where the reference scorer disagrees with the human preference
/// (score ties count as failures). Callers filter no-consensus pairs first.
pub fn failure_complement(
    pairs: &[PairRecord],
    ref_scores_a: &[f64],
    ref_scores_b: &[f64],
) -> Result<Vec<PairRecord>, AnalysisError> {
    if ref_scores_a.len() != pairs.len() || ref_scores_b.len() != pairs.len() {
        return Err(AnalysisError::LengthMismatch {
            scores: ref_scores_a.len().min(ref_scores_b.len()),
            records: pairs.len(),
        });
    }
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let Some(prefers_b) = human_prefers_b(pair.human_second_fraction) else {
            continue;
        };
        let metric_prefers_b = if ref_scores_b[i] > ref_scores_a[i] {
            Some(true)
        } else if ref_scores_a[i] > ref_scores_b[i] {
            Some(false)
        } else {
            None
        };
        if metric_prefers_b != Some(prefers_b) {
            out.push(pair.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    pub degenerate: bool,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Spearman rank correlation between human labels (ordinals negative=0,
/// similar=1, positive=2) and normalized scores, with average-rank tie
/// handling; quintuplets supply exactly four of each. A constant vector on
/// either side makes the correlation undefined; such quintuplets return
/// rho = 0, flagged.
pub fn quintuplet_spearman(labels: &[Label], scores: &[f64]) -> SpearmanResult {
    debug_assert_eq!(labels.len(), scores.len());
    let ordinals: Vec<f64> = labels.iter().map(|l| f64::from(l.ordinal())).collect();
    let rx = average_ranks(&ordinals);
    let ry = average_ranks(scores);
    match pearson(&rx, &ry) {
        Some(rho) => SpearmanResult {
            rho,
            degenerate: false,
        },
        None => SpearmanResult {
            rho: 0.0,
            degenerate: true,
        },
    }
}

/// Positive/negative misalignment rates over quintuplets, plus the mean
/// Spearman correlation over non-degenerate quintuplets (summed in input
/// order).
///
/// A quintuplet counts toward PM when some positive scores strictly below
/// some similar, toward NM when some negative scores strictly above some
/// similar; quintuplets lacking the needed label pair are excluded from
/// that rate's denominator. Exact ties do not trigger misalignment.
pub fn misalignment_rates(
    quints: &[Quintuplet],
    scores: &[[f64; 4]],
) -> Result<MisalignmentReport, AnalysisError> {
    if scores.len() != quints.len() {
        return Err(AnalysisError::LengthMismatch {
            scores: scores.len(),
            records: quints.len(),
        });
    }
    let mut pm_num = 0usize;
    let mut pm_den = 0usize;
    let mut nm_num = 0usize;
    let mut nm_den = 0usize;
    let mut rho_sum = 0.0;
    let mut rho_count = 0usize;
    let mut degenerate = 0usize;
    for (quint, qscores) in quints.iter().zip(scores) {
        let labels = quint.labels();
        let similars: Vec<f64> = labels
            .iter()
            .zip(qscores)
            .filter(|(l, _)| **l == Label::Similar)
            .map(|(_, s)| *s)
            .collect();
        let positives: Vec<f64> = labels
            .iter()
            .zip(qscores)
            .filter(|(l, _)| **l == Label::Positive)
            .map(|(_, s)| *s)
            .collect();
        let negatives: Vec<f64> = labels
            .iter()
            .zip(qscores)
            .filter(|(l, _)| **l == Label::Negative)
            .map(|(_, s)| *s)
            .collect();
        if !similars.is_empty() && !positives.is_empty() {
            pm_den += 1;
            if positives
                .iter()
                .any(|p| similars.iter().any(|s| p < s))
            {
                pm_num += 1;
            }
        }
        if !similars.is_empty() && !negatives.is_empty() {
            nm_den += 1;
            if negatives
                .iter()
                .any(|n| similars.iter().any(|s| n > s))
            {
                nm_num += 1;
            }
        }
        let sp = quintuplet_spearman(&labels, qscores);
        if sp.degenerate {
            degenerate += 1;
        } else {
            rho_sum += sp.rho;
            rho_count += 1;
        }
    }
    if pm_den == 0 && nm_den == 0 {
        return Err(AnalysisError::NoEligibleQuintuplets);
    }
    Ok(MisalignmentReport {
        positive_rate: if pm_den > 0 {
            pm_num as f64 / pm_den as f64
        } else {
            0.0
        },
        negative_rate: if nm_den > 0 {
            nm_num as f64 / nm_den as f64
        } else {
            0.0
        },
        pm_denominator: pm_den,
        nm_denominator: nm_den,
        mean_spearman: if rho_count > 0 {
            rho_sum / rho_count as f64
        } else {
            0.0
        },
        degenerate_count: degenerate,
    })
}

/// Quintuplets containing at least one negative label, input order kept.
pub fn filter_negatives(quints: &[Quintuplet]) -> Vec<Quintuplet> {
    quints
        .iter()
        .filter(|q| q.has_negative())
        .cloned()
        .collect()
}

/// Mean over quintuplets of the best raw metric value among the original
/// and the four enhanced images (max when higher is better, min otherwise).
pub fn gold_standard(
    quint_scores: &[[f64; 5]],
    higher_is_better: bool,
) -> Result<f64, AnalysisError> {
    if quint_scores.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut sum = 0.0;
    for scores in quint_scores {
        let best = if higher_is_better {
            scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            scores.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        sum += best;
    }
    Ok(sum / quint_scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EnhancedEntry, Split};
    use std::path::PathBuf;

    pub(crate) fn pair(id: &str, a: &str, b: &str, fraction: f64) -> PairRecord {
        PairRecord {
            id: id.into(),
            model_a: a.into(),
            model_b: b.into(),
            img_a: PathBuf::from(format!("{id}_a.png")),
            img_b: PathBuf::from(format!("{id}_b.png")),
            human_second_fraction: fraction,
            split: Split::Train,
        }
    }

    fn quint(id: &str, labels: [Label; 4]) -> Quintuplet {
        Quintuplet {
            id: id.into(),
            original: PathBuf::from(format!("{id}_o.png")),
            enhanced: labels
                .iter()
                .enumerate()
                .map(|(i, l)| EnhancedEntry {
                    path: PathBuf::from(format!("{id}_e{i}.png")),
                    label: *l,
                })
                .collect(),
        }
    }

    #[test]
    fn phase1_small_group_contributes_all() {
        let pairs = vec![pair("p1", "m1", "m2", 0.9), pair("p2", "m2", "m1", 0.1)];
        let subset = phase1_subset(&pairs, 3, 7);
        assert_eq!(subset.len(), 2);
    }

    #[test]
    fn phase1_deterministic_under_seed() {
        let mut pairs = Vec::new();
        for g in 0..5 {
            for i in 0..10 {
                pairs.push(pair(
                    &format!("g{g}i{i}"),
                    &format!("m{g}"),
                    &format!("m{}", g + 1),
                    0.8,
                ));
            }
        }
        let a = phase1_subset(&pairs, 3, 123);
        let b = phase1_subset(&pairs, 3, 123);
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        let c = phase1_subset(&pairs, 3, 124);
        assert_ne!(a, c, "different seed should reshuffle some group");
    }

    #[test]
    fn accuracy_all_agree_is_100() {
        let pairs = vec![
            pair("p1", "m1", "m2", 0.9),
            pair("p2", "m1", "m2", 0.1),
            pair("p3", "m1", "m2", 0.7),
            pair("p4", "m1", "m2", 0.2),
        ];
        // metric agrees with humans everywhere
        let a = [0.0, 1.0, 0.0, 1.0];
        let b = [1.0, 0.0, 1.0, 0.0];
        let rep = pairwise_accuracy(&pairs, &a, &b, true, "s").unwrap();
        assert_eq!(rep.correct, 4);
        assert_eq!(rep.total, 4);
        assert_eq!(rep.accuracy_pct, 100.0);
    }

    #[test]
    fn accuracy_hand_enumerated_third() {
        // fractions [0.2, 0.8, 0.9], metric prefers A on all three:
        // correct only on the first -> 1/3.
        let pairs = vec![
            pair("p1", "m1", "m2", 0.2),
            pair("p2", "m1", "m2", 0.8),
            pair("p3", "m1", "m2", 0.9),
        ];
        let a = [1.0, 1.0, 1.0];
        let b = [0.0, 0.0, 0.0];
        let rep = pairwise_accuracy(&pairs, &a, &b, true, "s").unwrap();
        assert_eq!(rep.correct, 1);
        assert_eq!(rep.total, 3);
        assert!((rep.accuracy_pct - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_half_fractions_with_consensus_only_is_empty() {
        let pairs = vec![pair("p1", "m1", "m2", 0.5), pair("p2", "m1", "m2", 0.5)];
        match pairwise_accuracy(&pairs, &[1.0, 1.0], &[0.0, 0.0], true, "s") {
            Err(AnalysisError::EmptyAfterFiltering) => {}
            other => panic!("expected EmptyAfterFiltering, got {other:?}"),
        }
    }

    #[test]
    fn half_fraction_without_consensus_only_counts_incorrect() {
        let pairs = vec![pair("p1", "m1", "m2", 0.5)];
        let rep = pairwise_accuracy(&pairs, &[1.0], &[0.0], false, "s").unwrap();
        assert_eq!(rep.total, 1);
        assert_eq!(rep.correct, 0);
    }

    #[test]
    fn complement_is_exactly_the_disagreements() {
        let pairs = vec![
            pair("p1", "m1", "m2", 0.9),
            pair("p2", "m1", "m2", 0.9),
            pair("p3", "m1", "m2", 0.9),
        ];
        // reference wrong on pair 2 only
        let a = [0.0, 1.0, 0.0];
        let b = [1.0, 0.0, 1.0];
        let failures = failure_complement(&pairs, &a, &b).unwrap();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].id, "p2");
        // reference scores 0% on its own failure set by construction
        let rep = pairwise_accuracy(&failures, &[1.0], &[0.0], true, "s").unwrap();
        assert_eq!(rep.accuracy_pct, 0.0);
    }

    #[test]
    fn complement_empty_when_reference_agrees_everywhere() {
        let pairs = vec![pair("p1", "m1", "m2", 0.9)];
        let failures = failure_complement(&pairs, &[0.0], &[1.0]).unwrap();
        assert!(failures.is_empty());
    }

    #[test]
    fn spearman_reversed_scores_on_distinct_ordinals_is_minus_one() {
        // Only three distinct ordinals exist, so the tie-free reversed case
        // uses one label of each kind.
        let labels = [Label::Negative, Label::Similar, Label::Positive];
        let r = quintuplet_spearman(&labels, &[3.0, 2.0, 1.0]);
        assert!(!r.degenerate);
        assert_eq!(r.rho, -1.0);
    }

    #[test]
    fn spearman_tied_positives_use_average_ranks() {
        let labels = [Label::Negative, Label::Similar, Label::Positive, Label::Positive];
        let scores = [4.0, 3.0, 2.0, 1.0];
        let r = quintuplet_spearman(&labels, &scores);
        assert!(!r.degenerate);
        // label ranks: [1, 2, 3.5, 3.5]; score ranks: [4, 3, 2, 1]
        // Pearson of those vectors: hand value
        let rx = [1.0, 2.0, 3.5, 3.5];
        let ry = [4.0, 3.0, 2.0, 1.0];
        let expect = {
            let mx = 2.5_f64;
            let my = 2.5_f64;
            let mut sxy = 0.0_f64;
            let mut sxx = 0.0_f64;
            let mut syy = 0.0_f64;
            for i in 0..4 {
                sxy += (rx[i] - mx) * (ry[i] - my);
                sxx += (rx[i] - mx) * (rx[i] - mx);
                syy += (ry[i] - my) * (ry[i] - my);
            }
            sxy / (sxx * syy).sqrt()
        };
        assert!((r.rho - expect).abs() < 1e-12);
        assert!(r.rho < -0.9);
    }

    #[test]
    fn spearman_constant_labels_degenerate() {
        let labels = [Label::Positive; 4];
        let r = quintuplet_spearman(&labels, &[1.0, 2.0, 3.0, 4.0]);
        assert!(r.degenerate);
        assert_eq!(r.rho, 0.0);
    }

    #[test]
    fn misalignment_hand_case() {
        // [pos, pos, sim, neg] with scores [5, 2, 3, 1]: the second positive
        // (2) sits under the similar (3) -> PM; the negative (1) stays under
        // the similar -> no NM.
        let q = quint(
            "q1",
            [Label::Positive, Label::Positive, Label::Similar, Label::Negative],
        );
        let rep = misalignment_rates(&[q], &[[5.0, 2.0, 3.0, 1.0]]).unwrap();
        assert_eq!(rep.pm_denominator, 1);
        assert_eq!(rep.nm_denominator, 1);
        assert_eq!(rep.positive_rate, 1.0);
        assert_eq!(rep.negative_rate, 0.0);
    }

    #[test]
    fn misalignment_perfect_ordering_is_zero() {
        let quints = vec![
            quint("q1", [Label::Negative, Label::Similar, Label::Positive, Label::Positive]),
            quint("q2", [Label::Similar, Label::Negative, Label::Positive, Label::Similar]),
        ];
        let scores = vec![[0.0, 1.0, 2.0, 3.0], [1.0, 0.0, 2.0, 1.5]];
        let rep = misalignment_rates(&quints, &scores).unwrap();
        assert_eq!(rep.positive_rate, 0.0);
        assert_eq!(rep.negative_rate, 0.0);
    }

    #[test]
    fn quintuplet_without_similar_excluded_from_both() {
        let q = quint(
            "q1",
            [Label::Positive, Label::Positive, Label::Positive, Label::Negative],
        );
        match misalignment_rates(&[q], &[[1.0, 2.0, 3.0, 4.0]]) {
            Err(AnalysisError::NoEligibleQuintuplets) => {}
            other => panic!("expected NoEligibleQuintuplets, got {other:?}"),
        }
    }

    #[test]
    fn exact_ties_do_not_trigger_misalignment() {
        let q = quint(
            "q1",
            [Label::Positive, Label::Similar, Label::Negative, Label::Similar],
        );
        let rep = misalignment_rates(&[q], &[[1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(rep.positive_rate, 0.0);
        assert_eq!(rep.negative_rate, 0.0);
        assert_eq!(rep.degenerate_count, 1);
    }

    #[test]
    fn filter_negatives_keeps_order() {
        let quints = vec![
            quint("q1", [Label::Positive; 4]),
            quint("q2", [Label::Positive, Label::Negative, Label::Similar, Label::Positive]),
            quint("q3", [Label::Similar; 4]),
            quint("q4", [Label::Negative, Label::Negative, Label::Similar, Label::Positive]),
            quint("q5", [Label::Positive; 4]),
        ];
        let kept = filter_negatives(&quints);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].id, "q2");
        assert_eq!(kept[1].id, "q4");
        assert!(filter_negatives(&quints[..1]).is_empty());
    }

    #[test]
    fn gold_standard_best_per_quintuplet() {
        let scores = [[3.0, 5.0, 4.0, 1.0, 2.0]];
        assert_eq!(gold_standard(&scores, true).unwrap(), 5.0);
        assert_eq!(gold_standard(&scores, false).unwrap(), 1.0);
        let two = [[3.0, 5.0, 4.0, 1.0, 2.0], [7.0, 6.0, 1.0, 0.0, 3.0]];
        assert_eq!(gold_standard(&two, true).unwrap(), 6.0);
        match gold_standard(&[], true) {
            Err(AnalysisError::EmptyInput) => {}
            other => panic!("expected EmptyInput, got {other:?}"),
        }
    }
}
