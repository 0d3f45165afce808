//! Exhaustive cross-check of the ranked-retrieval scoring against an
//! independently written precision-envelope reference.

mod common;

use smartbin_core::dataset::GroundTruthBox;
use smartbin_core::detector::Detection;
use smartbin_core::metrics::{
    average_precision, evaluate, MatchFlag, MatchResult, mean_average_precision,
};

/// Reference implementation, written from the definition: precision and
/// recall at every rank, precision replaced by the running maximum over
/// later ranks, recall-step increments summed at true-positive ranks.
fn reference_ap(flags: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let n = flags.len();
    let mut precision = vec![0.0f64; n];
    let mut recall = vec![0.0f64; n];
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision[rank] = tp as f64 / (rank + 1) as f64;
        recall[rank] = tp as f64 / total_gt as f64;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for rank in 0..n {
        if flags[rank] {
            let envelope = precision[rank..]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            ap += (recall[rank] - prev_recall) * envelope;
            prev_recall = recall[rank];
        }
    }
    ap
}

fn result_from_flags(flags: &[bool]) -> MatchResult {
    MatchResult {
        flags: flags
            .iter()
            .enumerate()
            .map(|(i, &hit)| MatchFlag {
                confidence: 1.0 - 0.05 * i as f64, // distinct, descending
                category_id: 0,
                is_true_positive: hit,
            })
            .collect(),
        unmatched_gt: 0,
    }
}

#[test]
fn every_small_flag_sequence_scores_identically_to_the_reference() {
    let mut checked = 0usize;
    for len in 0..=6usize {
        for mask in 0..(1u32 << len) {
            let flags: Vec<bool> = (0..len).map(|i| mask & (1 << i) != 0).collect();
            let tp_count = flags.iter().filter(|&&f| f).count();
            if tp_count > 3 {
                continue;
            }
            for total_gt in tp_count.max(1)..=3 {
                let ours = average_precision(&result_from_flags(&flags), total_gt);
                let reference = reference_ap(&flags, total_gt);
                // both are sums of identical terms in identical order
                assert_eq!(ours, reference, "flags {flags:?} total_gt {total_gt}");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 189); // all (sequence, gt) pairs within the caps
}

#[test]
fn zero_ground_truth_scores_zero() {
    assert_eq!(average_precision(&result_from_flags(&[true, false]), 0), 0.0);
}

#[test]
fn hand_worked_rankings_score_exactly() {
    // TP then trailing FP: the envelope keeps AP at 1.
    assert_eq!(average_precision(&result_from_flags(&[true, false]), 1), 1.0);
    // FP outranks the only TP: precision at the hit is 1/2.
    assert_eq!(average_precision(&result_from_flags(&[false, true]), 1), 0.5);
    // TP, FP, TP over two truths: 0.5 * 1 + 0.5 * (2/3).
    assert_eq!(
        average_precision(&result_from_flags(&[true, false, true]), 2),
        0.5 + 0.5 * (2.0 / 3.0)
    );
    // Missed truth caps recall: a lone TP over two truths earns half.
    assert_eq!(average_precision(&result_from_flags(&[true]), 2), 0.5);
}

#[test]
fn flipping_a_trailing_miss_to_a_hit_never_hurts() {
    for len in 1..=6usize {
        for mask in 0..(1u32 << len) {
            let flags: Vec<bool> = (0..len).map(|i| mask & (1 << i) != 0).collect();
            let tp_count = flags.iter().filter(|&&f| f).count();
            if tp_count > 2 {
                continue; // flipped sequence must stay within 3 hits
            }
            let Some(last_miss) = flags.iter().rposition(|&f| !f) else {
                continue;
            };
            let mut flipped = flags.clone();
            flipped[last_miss] = true;
            let before = average_precision(&result_from_flags(&flags), 3);
            let after = average_precision(&result_from_flags(&flipped), 3);
            assert!(
                after >= before,
                "flags {flags:?}: {before} fell to {after}"
            );
        }
    }
}

#[test]
fn merge_orders_by_confidence_and_keeps_ties_stable() {
    let a = MatchResult {
        flags: vec![
            MatchFlag { confidence: 0.9, category_id: 0, is_true_positive: true },
            MatchFlag { confidence: 0.5, category_id: 0, is_true_positive: false },
        ],
        unmatched_gt: 1,
    };
    let b = MatchResult {
        flags: vec![
            MatchFlag { confidence: 0.7, category_id: 0, is_true_positive: true },
            MatchFlag { confidence: 0.5, category_id: 0, is_true_positive: true },
        ],
        unmatched_gt: 0,
    };
    let merged = MatchResult::merge(&[a, b]);
    let confs: Vec<f64> = merged.flags.iter().map(|f| f.confidence).collect();
    assert_eq!(confs, vec![0.9, 0.7, 0.5, 0.5]);
    // the 0.5 from the first image precedes the 0.5 from the second
    assert!(!merged.flags[2].is_true_positive);
    assert!(merged.flags[3].is_true_positive);
    assert_eq!(merged.unmatched_gt, 1);
}

fn det(category_id: usize, cx: f64, cy: f64, confidence: f64) -> Detection {
    Detection { category_id, cx, cy, w: 0.2, h: 0.2, confidence }
}

fn gt(category_id: usize, cx: f64, cy: f64) -> GroundTruthBox {
    GroundTruthBox { category_id, cx, cy, w: 0.2, h: 0.2 }
}

#[test]
fn geometric_evaluation_matches_hand_scores() {
    // Category 0: a confident false positive outranks the true hit.
    // Category 1: one clean hit.
    let images = vec![
        (
            vec![
                det(0, 0.25, 0.25, 0.9),  // exact hit
                det(0, 0.75, 0.25, 0.95), // overlaps nothing
                det(1, 0.25, 0.75, 0.8),  // exact hit
            ],
            vec![gt(0, 0.25, 0.25), gt(1, 0.25, 0.75)],
        ),
        (Vec::new(), Vec::new()), // an empty image changes nothing
    ];
    let eval = evaluate(&images, 2, 0.5).unwrap();
    assert_eq!(eval.per_category[0].ap, 0.5);
    assert_eq!(eval.per_category[0].gt_count, 1);
    assert_eq!(eval.per_category[1].ap, 1.0);
    assert_eq!(eval.map, 0.75);
}

#[test]
fn perfect_detections_score_unit_map() {
    let images = vec![(
        vec![det(0, 0.3, 0.3, 0.9), det(1, 0.7, 0.7, 0.8)],
        vec![gt(0, 0.3, 0.3), gt(1, 0.7, 0.7)],
    )];
    let eval = evaluate(&images, 2, 0.5).unwrap();
    assert_eq!(eval.map, 1.0);
}

#[test]
fn categories_without_ground_truth_are_left_out_of_the_mean() {
    let images = vec![(
        vec![det(0, 0.3, 0.3, 0.9), det(1, 0.7, 0.7, 0.8)],
        vec![gt(0, 0.3, 0.3)], // category 1 has no truth at all
    )];
    let eval = evaluate(&images, 2, 0.5).unwrap();
    assert_eq!(eval.per_category[1].ap, 0.0);
    assert_eq!(eval.per_category[1].gt_count, 0);
    assert_eq!(eval.map, 1.0); // mean over category 0 alone
    assert_eq!(mean_average_precision(&[]), 0.0);
}
