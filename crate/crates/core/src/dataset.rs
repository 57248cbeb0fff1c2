//! Salient-sign annotation schema: loading, validation, statistics, splits.
//!
//! The on-disk format is UTF-8 JSON:
//!
//! ```json
//! {
//!   "declared_counts": {"total": 3, "salient": 2, "non_salient": 1},
//!   "images": [
//!     {"image_id": "a", "width": 640, "height": 480, "source_clip": "clip-01",
//!      "annotations": [
//!        {"id": "a-0", "box": [10.0, 20.0, 40.0, 50.0], "category": "stop",
//!         "salient": true, "occluded": false}
//!      ]}
//!   ]
//! }
//! ```
//!
//! `declared_counts`, `source_clip` and `occluded` are optional. Unknown keys
//! are rejected.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::io::write_atomic;
use crate::matching::Detection;

/// Closed set of sign categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignCategory {
    Stop,
    Yield,
    DoNotEnter,
    WrongWay,
    SchoolZone,
    Railroad,
    RedWhiteRegulatory,
    WhiteRegulatory,
    ConstructionMaintenance,
    Warning,
    NoTurn,
    OneWay,
    NoTurnOnRed,
    DoNotPass,
    SpeedLimit,
    Guide,
    ServiceRecreation,
    Undefined,
}

impl SignCategory {
    pub const ALL: [SignCategory; 18] = [
        SignCategory::Stop,
        SignCategory::Yield,
        SignCategory::DoNotEnter,
        SignCategory::WrongWay,
        SignCategory::SchoolZone,
        SignCategory::Railroad,
        SignCategory::RedWhiteRegulatory,
        SignCategory::WhiteRegulatory,
        SignCategory::ConstructionMaintenance,
        SignCategory::Warning,
        SignCategory::NoTurn,
        SignCategory::OneWay,
        SignCategory::NoTurnOnRed,
        SignCategory::DoNotPass,
        SignCategory::SpeedLimit,
        SignCategory::Guide,
        SignCategory::ServiceRecreation,
        SignCategory::Undefined,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SignCategory::Stop => "stop",
            SignCategory::Yield => "yield",
            SignCategory::DoNotEnter => "do-not-enter",
            SignCategory::WrongWay => "wrong-way",
            SignCategory::SchoolZone => "school-zone",
            SignCategory::Railroad => "railroad",
            SignCategory::RedWhiteRegulatory => "red-white-regulatory",
            SignCategory::WhiteRegulatory => "white-regulatory",
            SignCategory::ConstructionMaintenance => "construction-maintenance",
            SignCategory::Warning => "warning",
            SignCategory::NoTurn => "no-turn",
            SignCategory::OneWay => "one-way",
            SignCategory::NoTurnOnRed => "no-turn-on-red",
            SignCategory::DoNotPass => "do-not-pass",
            SignCategory::SpeedLimit => "speed-limit",
            SignCategory::Guide => "guide",
            SignCategory::ServiceRecreation => "service-recreation",
            SignCategory::Undefined => "undefined",
        }
    }
}

impl fmt::Display for SignCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SignCategory::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown sign category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignAnnotation {
    pub id: String,
    pub image_id: String,
    pub bbox: BBox,
    pub category: SignCategory,
    pub salient: bool,
    pub occluded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub source_clip: Option<String>,
    pub annotations: Vec<SignAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredCounts {
    pub total: u64,
    pub salient: u64,
    pub non_salient: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub declared_counts: Option<DeclaredCounts>,
}

/// One offending record found during validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    /// Annotation id, image id, or `<dataset>` for dataset-level problems.
    pub record: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.message)
    }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation failed: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),
}

impl DatasetError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => DatasetError::Schema(e.to_string()),
            Category::Io | Category::Syntax | Category::Eof => DatasetError::Parse(e.to_string()),
        }
    }
}

// File-level mirror of the schema. Validation turns these into domain types.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared_counts: Option<DeclaredCounts>,
    images: Vec<ImageFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageFile {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_clip: Option<String>,
    annotations: Vec<AnnotationFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category: String,
    salient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    occluded: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionsFile {
    detections: Vec<DetectionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionEntry {
    image_id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

impl Dataset {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn annotations(&self) -> impl Iterator<Item = &SignAnnotation> {
        self.images.iter().flat_map(|im| im.annotations.iter())
    }

    pub fn annotation_count(&self) -> usize {
        self.images.iter().map(|im| im.annotations.len()).sum()
    }

    /// Annotations grouped by image id. Every image appears, including ones
    /// with no annotations.
    pub fn annotations_by_image(&self) -> BTreeMap<String, Vec<SignAnnotation>> {
        self.images
            .iter()
            .map(|im| (im.image_id.clone(), im.annotations.clone()))
            .collect()
    }

    /// Checks every dataset invariant and returns all problems found.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut image_ids = HashSet::new();
        let mut ann_ids = HashSet::new();
        for im in &self.images {
            if !image_ids.insert(im.image_id.as_str()) {
                issues.push(issue(&im.image_id, "duplicate image id"));
            }
            if im.width == 0 || im.height == 0 {
                issues.push(issue(
                    &im.image_id,
                    format!("image size must be positive, got {}x{}", im.width, im.height),
                ));
            }
            for ann in &im.annotations {
                if !ann_ids.insert(ann.id.as_str()) {
                    issues.push(issue(&ann.id, "duplicate annotation id"));
                }
                if ann.image_id != im.image_id {
                    issues.push(issue(
                        &ann.id,
                        format!(
                            "annotation references image {:?} but is owned by {:?}",
                            ann.image_id, im.image_id
                        ),
                    ));
                }
                if !ann.bbox.within_image(im.width as f64, im.height as f64) {
                    issues.push(issue(
                        &ann.id,
                        format!(
                            "box {:?} exceeds image bounds {}x{}",
                            ann.bbox.to_array(),
                            im.width,
                            im.height
                        ),
                    ));
                }
            }
        }
        if let Some(declared) = self.declared_counts {
            let stats = dataset_stats(self);
            if declared.salient + declared.non_salient != declared.total {
                issues.push(issue(
                    "<dataset>",
                    format!(
                        "declared counts inconsistent: salient {} + non_salient {} != total {}",
                        declared.salient, declared.non_salient, declared.total
                    ),
                ));
            }
            let found = DeclaredCounts {
                total: stats.total,
                salient: stats.salient,
                non_salient: stats.non_salient,
            };
            if found != declared {
                issues.push(issue(
                    "<dataset>",
                    format!(
                        "declared counts {{total: {}, salient: {}, non_salient: {}}} do not match recomputed {{total: {}, salient: {}, non_salient: {}}}",
                        declared.total, declared.salient, declared.non_salient,
                        found.total, found.salient, found.non_salient
                    ),
                ));
            }
        }
        issues
    }

    /// Parses and validates a dataset held in memory.
    pub fn from_json_str(text: &str) -> Result<Self, DatasetError> {
        let file: DatasetFile = serde_json::from_str(text).map_err(DatasetError::from_json)?;
        let mut issues = Vec::new();
        let mut images = Vec::with_capacity(file.images.len());
        for im in file.images {
            let mut annotations = Vec::with_capacity(im.annotations.len());
            for a in im.annotations {
                let bbox = match BBox::try_from(a.bbox) {
                    Ok(b) => b,
                    Err(e) => {
                        issues.push(issue(&a.id, e.to_string()));
                        continue;
                    }
                };
                let category = match a.category.parse::<SignCategory>() {
                    Ok(c) => c,
                    Err(e) => {
                        issues.push(issue(&a.id, e));
                        continue;
                    }
                };
                annotations.push(SignAnnotation {
                    id: a.id,
                    image_id: im.image_id.clone(),
                    bbox,
                    category,
                    salient: a.salient,
                    occluded: a.occluded,
                });
            }
            images.push(ImageRecord {
                image_id: im.image_id,
                width: im.width,
                height: im.height,
                source_clip: im.source_clip,
                annotations,
            });
        }
        let ds = Dataset {
            images,
            declared_counts: file.declared_counts,
        };
        issues.extend(ds.validate());
        if issues.is_empty() {
            Ok(ds)
        } else {
            Err(DatasetError::Validation(issues))
        }
    }

    /// Canonical pretty-printed JSON. Key order follows the schema.
    pub fn to_json_string(&self) -> String {
        let file = DatasetFile {
            declared_counts: self.declared_counts,
            images: self
                .images
                .iter()
                .map(|im| ImageFile {
                    image_id: im.image_id.clone(),
                    width: im.width,
                    height: im.height,
                    source_clip: im.source_clip.clone(),
                    annotations: im
                        .annotations
                        .iter()
                        .map(|a| AnnotationFile {
                            id: a.id.clone(),
                            bbox: a.bbox.to_array(),
                            category: a.category.as_str().to_string(),
                            salient: a.salient,
                            occluded: a.occluded,
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
        s.push('\n');
        s
    }
}

fn issue(record: &str, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        record: record.to_string(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    Dataset::from_json_str(&read_text(path.as_ref())?)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    write_atomic(path, ds.to_json_string().as_bytes()).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn detections_from_json_str(text: &str) -> Result<Vec<Detection>, DatasetError> {
    let file: DetectionsFile = serde_json::from_str(text).map_err(DatasetError::from_json)?;
    let mut issues = Vec::new();
    let mut out = Vec::with_capacity(file.detections.len());
    for (i, d) in file.detections.into_iter().enumerate() {
        let record = format!("detection[{i}]");
        match Detection::new(d.image_id, d.bbox, d.score) {
            Ok(det) => out.push(det),
            Err(e) => issues.push(issue(&record, e.to_string())),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(DatasetError::Validation(issues))
    }
}

pub fn detections_to_json_string(dets: &[Detection]) -> String {
    let file = DetectionsFile {
        detections: dets
            .iter()
            .map(|d| DetectionEntry {
                image_id: d.image_id.clone(),
                bbox: d.bbox.to_array(),
                score: d.score,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("detections serialize");
    s.push('\n');
    s
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, DatasetError> {
    detections_from_json_str(&read_text(path.as_ref())?)
}

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    write_atomic(path, detections_to_json_string(dets).as_bytes()).map_err(|source| {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SalienceCount {
    pub salient: u64,
    pub non_salient: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatsReport {
    pub total: u64,
    pub salient: u64,
    pub non_salient: u64,
    /// Only categories that occur are present.
    pub per_category: BTreeMap<SignCategory, SalienceCount>,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "total {}  salient {}  non-salient {}",
            self.total, self.salient, self.non_salient
        )?;
        writeln!(f, "{:<26} {:>10} {:>12}", "category", "salient", "non-salient")?;
        for (cat, c) in &self.per_category {
            writeln!(f, "{:<26} {:>10} {:>12}", cat.as_str(), c.salient, c.non_salient)?;
        }
        Ok(())
    }
}

/// Sign counts split by salience, overall and per category.
pub fn dataset_stats(ds: &Dataset) -> StatsReport {
    let mut report = StatsReport::default();
    for ann in ds.annotations() {
        let entry = report.per_category.entry(ann.category).or_default();
        if ann.salient {
            report.salient += 1;
            entry.salient += 1;
        } else {
            report.non_salient += 1;
            entry.non_salient += 1;
        }
        report.total += 1;
    }
    report
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split fraction {0} outside [0, 1]")]
    FractionRange(f64),
    #[error("split fractions sum to {0}, expected 1")]
    FractionSum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_fraction: f64,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, SplitError> {
        for f in [train, val, test] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SplitError::FractionRange(f));
            }
        }
        let sum = train + val + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::FractionSum(sum));
        }
        Ok(Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        })
    }

    /// `(train, val, test)` sizes for `n` items: validation and test get
    /// `floor(fraction * n)`, train gets everything else.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let n_val = floor(self.val_fraction);
        let n_test = floor(self.test_fraction);
        let n_train = n - n_val - n_test;
        (n_train, n_val, n_test)
    }
}

/// Partitions images (never individual annotations) into train/val/test.
///
/// Images are shuffled with a seeded ChaCha8 generator; each split keeps the
/// input order of its members.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> (Dataset, Dataset, Dataset) {
    let n = ds.images.len();
    let (n_train, n_val, _) = spec.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let mut assignment = vec![0u8; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }
    let pick = |which: u8| Dataset {
        images: ds
            .images
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == which)
            .map(|(im, _)| im.clone())
            .collect(),
        declared_counts: None,
    };
    (pick(0), pick(1), pick(2))
}
