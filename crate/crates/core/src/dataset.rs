//! Label parsing, dataset manifests and the seeded train/test split.
//!
//! Label files use the YOLO text layout: one object per line,
//! `category cx cy w h`, with box coordinates normalized to the image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("label line {line}: {message}")]
    LabelParse { line: usize, message: String },
    #[error("label line {line}: category {category_id} outside 0..{category_count}")]
    CategoryRange {
        line: usize,
        category_id: i64,
        category_count: usize,
    },
    #[error("label line {line}: {field} = {value} outside the normalized range")]
    CoordinateRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("duplicate image id {0:?} in manifest")]
    DuplicateImageId(String),
    #[error("cannot split an empty id list")]
    EmptyDataset,
}

/// One annotated object: normalized center/size box plus its category.
///
/// `cx`/`cy` lie in `[0, 1]`; `w`/`h` in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub category_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GroundTruthBox {
    /// Center/size pair for geometry helpers in [`crate::detector`].
    pub fn bbox(&self) -> crate::detector::BoundingBox {
        crate::detector::BoundingBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
        }
    }
}

/// Parse the body of a YOLO label file. Blank lines are skipped; any
/// malformed or out-of-range line aborts with its 1-based line number.
pub fn parse_label_file(
    text: &str,
    category_count: usize,
) -> Result<Vec<GroundTruthBox>, DatasetError> {
    let mut boxes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(DatasetError::LabelParse {
                line,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let category_id: i64 = fields[0].parse().map_err(|_| DatasetError::LabelParse {
            line,
            message: format!("non-numeric category {:?}", fields[0]),
        })?;
        if category_id < 0 || category_id as usize >= category_count {
            return Err(DatasetError::CategoryRange {
                line,
                category_id,
                category_count,
            });
        }
        let mut coords = [0.0f64; 4];
        for (slot, field) in coords.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| DatasetError::LabelParse {
                line,
                message: format!("non-numeric coordinate {field:?}"),
            })?;
        }
        let [cx, cy, w, h] = coords;
        for (field, value) in [("cx", cx), ("cy", cy)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DatasetError::CoordinateRange { line, field, value });
            }
        }
        for (field, value) in [("w", w), ("h", h)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(DatasetError::CoordinateRange { line, field, value });
            }
        }
        boxes.push(GroundTruthBox {
            category_id: category_id as usize,
            cx,
            cy,
            w,
            h,
        });
    }
    Ok(boxes)
}

/// Inverse of [`parse_label_file`]. Floats are written with the shortest
/// representation that round-trips, so parse(serialize(b)) == b exactly.
pub fn serialize_label_file(boxes: &[GroundTruthBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        writeln!(out, "{} {} {} {} {}", b.category_id, b.cx, b.cy, b.w, b.h)
            .expect("writing to a String cannot fail");
    }
    out
}

/// Manifest row on disk: an image id plus the path of its label file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFileEntry {
    pub image_id: String,
    pub label_path: PathBuf,
}

/// A fully loaded dataset: per-image boxes plus the category names.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub category_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub image_id: String,
    pub boxes: Vec<GroundTruthBox>,
}

/// Read a manifest index (JSON array of `{image_id, label_path}`) without
/// touching the label files. Relative label paths are kept as written.
pub fn read_manifest_index(path: &Path) -> Result<Vec<ManifestFileEntry>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestFileEntry> =
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let mut seen = std::collections::HashSet::new();
    for entry in &entries {
        if !seen.insert(entry.image_id.clone()) {
            return Err(DatasetError::DuplicateImageId(entry.image_id.clone()));
        }
    }
    Ok(entries)
}

/// Load a manifest index and every label file it references. Relative
/// label paths are resolved against the manifest's directory.
pub fn load_manifest(
    path: &Path,
    category_names: Vec<String>,
) -> Result<DatasetManifest, DatasetError> {
    let index = read_manifest_index(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::with_capacity(index.len());
    for row in index {
        let label_path = if row.label_path.is_absolute() {
            row.label_path.clone()
        } else {
            base.join(&row.label_path)
        };
        let text = fs::read_to_string(&label_path).map_err(|source| DatasetError::Io {
            path: label_path.clone(),
            source,
        })?;
        let boxes = parse_label_file(&text, category_names.len())?;
        entries.push(ManifestEntry {
            image_id: row.image_id,
            boxes,
        });
    }
    Ok(DatasetManifest {
        entries,
        category_names,
    })
}

/// Category names, one per line; blank lines ignored.
pub fn load_category_names(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Deterministic train/test partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitResult {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("split serialization cannot fail");
        fs::write(path, text).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Shuffle ids with a seeded Fisher-Yates pass and cut the prefix.
///
/// Train size is `floor(train_fraction * n)`; the same seed always yields
/// the same partition. The permutation loop is spelled out here (rather
/// than using `SliceRandom::shuffle`) so the exact order stays pinned even
/// if the rand crate changes its shuffle internals.
pub fn split_ids(
    ids: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    if ids.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateImageId(id.clone()));
        }
    }
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let train_len = (train_fraction * n as f64).floor() as usize;
    let train = order[..train_len]
        .iter()
        .map(|&i| ids[i].clone())
        .collect();
    let test = order[train_len..]
        .iter()
        .map(|&i| ids[i].clone())
        .collect();
    Ok(SplitResult { seed, train, test })
}

/// [`split_ids`] over the image ids of a loaded manifest.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    let ids: Vec<String> = manifest
        .entries
        .iter()
        .map(|e| e.image_id.clone())
        .collect();
    split_ids(&ids, train_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_plain_two_line_file() {
        let text = "0 0.5 0.5 0.2 0.3\n1 0.25 0.75 0.1 0.1\n";
        let boxes = parse_label_file(text, 2).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].category_id, 0);
        assert_eq!(boxes[0].cx, 0.5);
        assert_eq!(boxes[1].category_id, 1);
        assert_eq!(boxes[1].h, 0.1);
    }

    #[test]
    fn empty_file_yields_no_boxes() {
        assert!(parse_label_file("", 2).unwrap().is_empty());
        assert!(parse_label_file("\n\n  \n", 2).unwrap().is_empty());
    }

    #[test]
    fn wrong_field_count_reports_line_number() {
        let text = "0 0.5 0.5 0.2 0.3\n0 0.5 0.5 0.2\n";
        match parse_label_file(text, 2) {
            Err(DatasetError::LabelParse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("found 4"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_reports_line_number() {
        let text = "0 0.5 abc 0.2 0.3";
        match parse_label_file(text, 2) {
            Err(DatasetError::LabelParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn category_out_of_range_is_rejected() {
        match parse_label_file("2 0.5 0.5 0.2 0.3", 2) {
            Err(DatasetError::CategoryRange {
                line,
                category_id,
                category_count,
            }) => {
                assert_eq!((line, category_id, category_count), (1, 2, 2));
            }
            other => panic!("expected category error, got {other:?}"),
        }
        assert!(matches!(
            parse_label_file("-1 0.5 0.5 0.2 0.3", 2),
            Err(DatasetError::CategoryRange { .. })
        ));
    }

    #[test]
    fn coordinates_outside_unit_range_are_rejected() {
        assert!(matches!(
            parse_label_file("0 1.5 0.5 0.2 0.3", 2),
            Err(DatasetError::CoordinateRange { field: "cx", .. })
        ));
        // zero-size boxes carry no area and are rejected up front
        assert!(matches!(
            parse_label_file("0 0.5 0.5 0 0.3", 2),
            Err(DatasetError::CoordinateRange { field: "w", .. })
        ));
        assert!(matches!(
            parse_label_file("0 0.5 0.5 0.2 nan", 2),
            Err(DatasetError::CoordinateRange { field: "h", .. })
        ));
    }

    #[test]
    fn serialize_then_parse_round_trips_exactly() {
        let text = "0 0.5 0.5 0.2 0.3\n1 0.123456789 0.75 0.1 0.0625\n";
        let boxes = parse_label_file(text, 2).unwrap();
        let rewritten = serialize_label_file(&boxes);
        let reparsed = parse_label_file(&rewritten, 2).unwrap();
        assert_eq!(boxes, reparsed);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:04}")).collect()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let split = split_ids(&ids(470), 0.9, 7).unwrap();
        assert_eq!(split.train.len(), 423);
        assert_eq!(split.test.len(), 47);

        let split = split_ids(&ids(10), 0.85, 7).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn same_seed_same_partition() {
        let a = split_ids(&ids(101), 0.9, 42).unwrap();
        let b = split_ids(&ids(101), 0.9, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ_on_fixed_input() {
        let a = split_ids(&ids(101), 0.9, 1).unwrap();
        let b = split_ids(&ids(101), 0.9, 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    // Regression pin: the exact permutation for one seed. Catches silent
    // changes to the RNG stream or the shuffle loop.
    #[test]
    fn seed_zero_order_is_pinned() {
        let split = split_ids(&ids(8), 0.75, 0).unwrap();
        let got: Vec<&str> = split
            .train
            .iter()
            .chain(split.test.iter())
            .map(String::as_str)
            .collect();
        // Regression pin: this permutation is part of the output contract,
        // a change here means every stored split file goes stale.
        assert_eq!(
            got,
            [
                "img0000", "img0001", "img0003", "img0007", "img0002", "img0006", "img0004",
                "img0005"
            ]
        );
    }

    #[test]
    fn invalid_fraction_is_rejected() {
        for f in [0.0, 1.0, -0.2, 1.7, f64::NAN] {
            assert!(matches!(
                split_ids(&ids(4), f, 0),
                Err(DatasetError::InvalidFraction(_))
            ));
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut v = ids(4);
        v.push("img0002".into());
        assert!(matches!(
            split_ids(&v, 0.5, 0),
            Err(DatasetError::DuplicateImageId(_))
        ));
    }
}
