//! Detection quality metrics: greedy matching, all-points average
//! precision, mAP, and the mAP-vs-iteration curve.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroundTruthBox;
use crate::detector::{iou, Detection, DetectorError, ImageDetections};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Geometry(#[from] DetectorError),
    #[error("iteration {iteration} exceeds max_batches {max_batches}")]
    IterationExceedsMax { iteration: u32, max_batches: u32 },
    #[error("iteration {iteration} is not a multiple of the interval {interval}")]
    IterationOffInterval { iteration: u32, interval: u32 },
    #[error("snapshot iterations must increase strictly: {prev} then {next}")]
    NonIncreasingIterations { prev: u32, next: u32 },
    #[error("curve interval must be positive")]
    ZeroInterval,
    #[error("snapshot references image id {0:?} absent from the ground truth")]
    UnknownImageId(String),
}

/// Outcome for one ranked detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchFlag {
    pub confidence: f64,
    pub category_id: usize,
    pub is_true_positive: bool,
}

/// Ranked matching outcome for one image (or a merge of several).
/// `flags` is sorted by confidence descending; ties keep input order.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub flags: Vec<MatchFlag>,
    pub unmatched_gt: usize,
}

impl MatchResult {
    /// Combine per-image results into one ranked sequence. The stable
    /// re-sort keeps equal-confidence detections in their original
    /// (image, rank) order, so merging is deterministic.
    pub fn merge(parts: &[MatchResult]) -> MatchResult {
        let mut flags: Vec<MatchFlag> = parts.iter().flat_map(|p| p.flags.clone()).collect();
        flags.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .expect("confidences are finite")
        });
        MatchResult {
            flags,
            unmatched_gt: parts.iter().map(|p| p.unmatched_gt).sum(),
        }
    }
}

/// Default IoU threshold for counting a detection as a true positive.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Greedy one-to-one matching for a single image.
///
/// Detections are visited by descending confidence (ties by input order).
/// Each one claims the highest-IoU still-unmatched ground truth of its own
/// category, provided IoU >= `iou_threshold`; otherwise it is a false
/// positive. Equal-IoU candidates resolve to the earliest ground truth.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<MatchResult, MetricsError> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .expect("confidences are finite")
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; ground_truth.len()];
    let mut flags = Vec::with_capacity(detections.len());
    for &i in &order {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if gt_taken[g] || gt.category_id != det.category_id {
                continue;
            }
            let overlap = iou(&det.bbox(), &gt.bbox())?;
            if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        let is_tp = if let Some((g, _)) = best {
            gt_taken[g] = true;
            true
        } else {
            false
        };
        flags.push(MatchFlag {
            confidence: det.confidence,
            category_id: det.category_id,
            is_true_positive: is_tp,
        });
    }
    Ok(MatchResult {
        flags,
        unmatched_gt: gt_taken.iter().filter(|&&t| !t).count(),
    })
}

/// All-points average precision from a ranked TP/FP sequence.
///
/// Walks the ranking accumulating (recall, precision) points, replaces
/// precision by its running maximum from the right (the envelope), and
/// sums envelope precision times recall increment at every true positive.
/// `total_gt == 0` yields 0.0 by definition; the caller is expected to
/// surface that case (see [`CategoryEval::gt_count`]).
pub fn average_precision(matches: &MatchResult, total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    // (recall, precision) at each rank
    let mut points = Vec::with_capacity(matches.flags.len());
    for flag in &matches.flags {
        if flag.is_true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((
            tp as f64 / total_gt as f64,
            tp as f64 / (tp + fp) as f64,
            flag.is_true_positive,
        ));
    }
    // precision envelope: max precision at any recall >= this rank's
    let mut envelope = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for (i, &(_, p, _)) in points.iter().enumerate().rev() {
        running = running.max(p);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _, is_tp)) in points.iter().enumerate() {
        if is_tp {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    ap
}

/// Arithmetic mean of per-category AP values. Empty input yields 0.0.
pub fn mean_average_precision(per_category_ap: &[f64]) -> f64 {
    if per_category_ap.is_empty() {
        return 0.0;
    }
    per_category_ap.iter().sum::<f64>() / per_category_ap.len() as f64
}

/// Per-category outcome of a full-dataset evaluation. `gt_count == 0`
/// marks a category with no ground truth: its AP is reported as 0 and it
/// is excluded from the mAP mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEval {
    pub category_id: usize,
    pub ap: f64,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_category: Vec<CategoryEval>,
    pub map: f64,
}

/// Match and score a whole image set: AP per category, mAP over the
/// categories present in the ground truth.
pub fn evaluate(
    images: &[(Vec<Detection>, Vec<GroundTruthBox>)],
    category_count: usize,
    iou_threshold: f64,
) -> Result<Evaluation, MetricsError> {
    let mut per_category = Vec::with_capacity(category_count);
    for category in 0..category_count {
        let mut parts = Vec::with_capacity(images.len());
        let mut gt_count = 0usize;
        for (dets, gts) in images {
            let dets: Vec<Detection> = dets
                .iter()
                .filter(|d| d.category_id == category)
                .cloned()
                .collect();
            let gts: Vec<GroundTruthBox> = gts
                .iter()
                .filter(|g| g.category_id == category)
                .cloned()
                .collect();
            gt_count += gts.len();
            parts.push(match_detections(&dets, &gts, iou_threshold)?);
        }
        let merged = MatchResult::merge(&parts);
        let ap = if gt_count == 0 {
            0.0
        } else {
            average_precision(&merged, gt_count)
        };
        per_category.push(CategoryEval {
            category_id: category,
            ap,
            gt_count,
        });
    }
    let present: Vec<f64> = per_category
        .iter()
        .filter(|c| c.gt_count > 0)
        .map(|c| c.ap)
        .collect();
    Ok(Evaluation {
        map: mean_average_precision(&present),
        per_category,
    })
}

/// One point of the mAP-vs-iteration curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurvePoint {
    pub iteration: u32,
    pub map_value: f64,
}

#[derive(Debug, Clone)]
pub struct CurveConfig {
    pub interval: u32,
    pub max_batches: u32,
    pub iou_threshold: f64,
    pub category_count: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            interval: 100,
            max_batches: 2500,
            iou_threshold: DEFAULT_MATCH_IOU,
            category_count: 2,
        }
    }
}

/// Detections captured at one training iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u32,
    pub images: Vec<ImageDetections>,
}

/// Score a series of detection snapshots against fixed ground truth.
///
/// Iterations must be strictly increasing, multiples of the interval and
/// within `max_batches`. Images missing from a snapshot count as having
/// no detections; snapshot ids unknown to the ground truth are an error.
pub fn eval_curve(
    snapshots: &[Snapshot],
    ground_truth: &[(String, Vec<GroundTruthBox>)],
    config: &CurveConfig,
) -> Result<Vec<EvalCurvePoint>, MetricsError> {
    if config.interval == 0 {
        return Err(MetricsError::ZeroInterval);
    }
    let id_index: HashMap<&str, usize> = ground_truth
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();

    let mut points = Vec::with_capacity(snapshots.len());
    let mut prev: Option<u32> = None;
    for snapshot in snapshots {
        let iteration = snapshot.iteration;
        if let Some(p) = prev {
            if iteration <= p {
                return Err(MetricsError::NonIncreasingIterations {
                    prev: p,
                    next: iteration,
                });
            }
        }
        prev = Some(iteration);
        if iteration > config.max_batches {
            return Err(MetricsError::IterationExceedsMax {
                iteration,
                max_batches: config.max_batches,
            });
        }
        if iteration % config.interval != 0 {
            return Err(MetricsError::IterationOffInterval {
                iteration,
                interval: config.interval,
            });
        }

        let mut images: Vec<(Vec<Detection>, Vec<GroundTruthBox>)> = ground_truth
            .iter()
            .map(|(_, gts)| (Vec::new(), gts.clone()))
            .collect();
        for image in &snapshot.images {
            let &idx = id_index
                .get(image.image_id.as_str())
                .ok_or_else(|| MetricsError::UnknownImageId(image.image_id.clone()))?;
            images[idx].0.extend(image.detections.iter().cloned());
        }
        let eval = evaluate(&images, config.category_count, config.iou_threshold)?;
        points.push(EvalCurvePoint {
            iteration,
            map_value: eval.map,
        });
    }
    Ok(points)
}

/// Render curve points as `iteration,map` CSV (header included).
pub fn curve_to_csv(points: &[EvalCurvePoint]) -> String {
    let mut out = String::from("iteration,map\n");
    for p in points {
        writeln!(out, "{},{}", p.iteration, p.map_value).expect("writing to a String cannot fail");
    }
    out
}
