//! Post-processing for single-scale YOLO-style grid outputs: logit
//! decoding, IoU and greedy per-category non-maximum suppression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("non-finite logit {value} at cell ({cx}, {cy}) anchor {anchor}")]
    NonFiniteLogit {
        cx: usize,
        cy: usize,
        anchor: usize,
        value: f64,
    },
    #[error("cell index ({cx}, {cy}) outside a {grid_size}x{grid_size} grid")]
    CellOutOfRange {
        cx: usize,
        cy: usize,
        grid_size: usize,
    },
    #[error("anchor index {anchor} outside 0..{anchor_count}")]
    AnchorOutOfRange { anchor: usize, anchor_count: usize },
    #[error("raw output needs grid_size > 0, anchors and categories; got grid {grid_size}, {anchor_count} anchors, {category_count} categories")]
    EmptyShape {
        grid_size: usize,
        anchor_count: usize,
        category_count: usize,
    },
    #[error("logit vector at cell ({cx}, {cy}) anchor {anchor} has {found} entries, expected {expected}")]
    LogitArity {
        cx: usize,
        cy: usize,
        anchor: usize,
        found: usize,
        expected: usize,
    },
    #[error("iou threshold {0} must lie strictly between 0 and 1")]
    InvalidIouThreshold(f64),
    #[error("confidence threshold {0} must lie in [0, 1]")]
    InvalidConfThreshold(f64),
    #[error("degenerate box with zero area")]
    DegenerateBox,
}

/// Axis-aligned box in center/size form. Plain geometry: no range is
/// enforced here, that is the caller's contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Intersection over union of two center/size boxes.
///
/// Either box having zero area is an error rather than a silent 0.0 —
/// degenerate boxes upstream are always a bug.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, DetectorError> {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    // Areas come from the same corner arithmetic as the intersection so
    // identical boxes score exactly 1.
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    if area_a <= 0.0 || area_b <= 0.0 {
        return Err(DetectorError::DegenerateBox);
    }
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    Ok(inter / union)
}

/// One decoded detection. `confidence = objectness * category probability`,
/// both squashed through the logistic before multiplying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
        }
    }
}

/// Detections for one image, as stored in detection JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

/// Raw logits for one (cell, anchor) slot: `[tx, ty, tw, th, t_obj,
/// category logits...]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCell {
    pub cx: usize,
    pub cy: usize,
    pub anchor: usize,
    pub t: Vec<f64>,
}

/// Single-scale raw network output. `cells` may be sparse: any slot not
/// listed defaults to all-zero logits with `t_obj = -100` (objectness
/// sigmoid ~ 0, so the slot decodes to a near-zero-confidence detection).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawGridOutput {
    pub grid_size: usize,
    pub input_size: u32,
    /// Anchor (width, height) pairs in input pixels.
    pub anchors: Vec<(f64, f64)>,
    /// Number of categories; files that omit it get the two-way default.
    #[serde(default = "default_category_count")]
    pub category_count: usize,
    #[serde(default)]
    pub cells: Vec<RawCell>,
}

fn default_category_count() -> usize {
    2
}

/// Logit value used for slots absent from a sparse `RawGridOutput`.
pub const ABSENT_OBJECTNESS_LOGIT: f64 = -100.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decode every (cell, anchor) slot of a raw grid output into normalized
/// detections. Output length is exactly `grid_size^2 * anchors.len()`; no
/// confidence filtering happens here.
///
/// Box math per slot, with `S = grid_size` and anchor `(aw, ah)`:
/// `bx = (sigmoid(tx) + col) / S`, `by = (sigmoid(ty) + row) / S`,
/// `bw = aw * exp(tw) / input_size`, `bh = ah * exp(th) / input_size`.
/// The chosen category is the argmax of the category logits, ties going
/// to the lowest id, and all box fields are clamped to the unit square.
pub fn decode(raw: &RawGridOutput) -> Result<Vec<Detection>, DetectorError> {
    let s = raw.grid_size;
    let anchor_count = raw.anchors.len();
    let categories = raw.category_count;
    if s == 0 || anchor_count == 0 || categories == 0 {
        return Err(DetectorError::EmptyShape {
            grid_size: s,
            anchor_count,
            category_count: categories,
        });
    }
    let logits_per_slot = 5 + categories;

    // Dense slot table, filled with the "absent" pattern first.
    let mut slots: Vec<Vec<f64>> = vec![Vec::new(); s * s * anchor_count];
    for cell in &raw.cells {
        if cell.cx >= s || cell.cy >= s {
            return Err(DetectorError::CellOutOfRange {
                cx: cell.cx,
                cy: cell.cy,
                grid_size: s,
            });
        }
        if cell.anchor >= anchor_count {
            return Err(DetectorError::AnchorOutOfRange {
                anchor: cell.anchor,
                anchor_count,
            });
        }
        if cell.t.len() != logits_per_slot {
            return Err(DetectorError::LogitArity {
                cx: cell.cx,
                cy: cell.cy,
                anchor: cell.anchor,
                found: cell.t.len(),
                expected: logits_per_slot,
            });
        }
        for &v in &cell.t {
            if !v.is_finite() {
                return Err(DetectorError::NonFiniteLogit {
                    cx: cell.cx,
                    cy: cell.cy,
                    anchor: cell.anchor,
                    value: v,
                });
            }
        }
        slots[(cell.cy * s + cell.cx) * anchor_count + cell.anchor] = cell.t.clone();
    }

    let mut absent = vec![0.0; logits_per_slot];
    absent[4] = ABSENT_OBJECTNESS_LOGIT;

    let mut detections = Vec::with_capacity(slots.len());
    for row in 0..s {
        for col in 0..s {
            for a in 0..anchor_count {
                let t: &[f64] = {
                    let slot = &slots[(row * s + col) * anchor_count + a];
                    if slot.is_empty() {
                        &absent
                    } else {
                        slot
                    }
                };
                let (aw, ah) = raw.anchors[a];
                let bx = (sigmoid(t[0]) + col as f64) / s as f64;
                let by = (sigmoid(t[1]) + row as f64) / s as f64;
                let bw = aw * t[2].exp() / raw.input_size as f64;
                let bh = ah * t[3].exp() / raw.input_size as f64;
                let objectness = sigmoid(t[4]);

                let mut best_cat = 0;
                let mut best_logit = t[5];
                for (c, &logit) in t[5..].iter().enumerate().skip(1) {
                    if logit > best_logit {
                        best_logit = logit;
                        best_cat = c;
                    }
                }
                detections.push(Detection {
                    category_id: best_cat,
                    cx: bx.clamp(0.0, 1.0),
                    cy: by.clamp(0.0, 1.0),
                    w: bw.clamp(f64::MIN_POSITIVE, 1.0),
                    h: bh.clamp(f64::MIN_POSITIVE, 1.0),
                    confidence: objectness * sigmoid(best_logit),
                });
            }
        }
    }
    Ok(detections)
}

/// Greedy per-category non-maximum suppression.
///
/// Detections below `conf_threshold` are dropped first. Survivors are
/// visited best-first; a detection is kept unless a kept detection of the
/// same category overlaps it with IoU >= `iou_threshold`. Ordering is
/// fully deterministic: confidence descending, then category id, then
/// input position. The result keeps that ordering.
pub fn nms(
    detections: &[Detection],
    iou_threshold: f64,
    conf_threshold: f64,
) -> Result<Vec<Detection>, DetectorError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(DetectorError::InvalidIouThreshold(iou_threshold));
    }
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(DetectorError::InvalidConfThreshold(conf_threshold));
    }

    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].confidence >= conf_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .expect("confidences are finite")
            .then(detections[a].category_id.cmp(&detections[b].category_id))
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let mut suppressed = false;
        for &k in &kept {
            if detections[k].category_id == detections[i].category_id
                && iou(&detections[k].bbox(), &detections[i].bbox())? >= iou_threshold
            {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept.into_iter().map(|i| detections[i].clone()).collect())
}

/// Default IoU threshold for suppression.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;
/// Default confidence floor applied before suppression.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
