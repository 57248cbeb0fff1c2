//! Threshold-swept precision/recall for all signs and for salient signs.
//!
//! Precision is shared between the two recall axes: a surviving detection is
//! correct when it matches any annotation. Only recall is stratified by
//! salience. The recall margin is `recall_salient - recall_all`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SignAnnotation;
use crate::io::write_atomic;
use crate::matching::{match_image, Detection, MatchError};

pub type DetectionsByImage = BTreeMap<String, Vec<Detection>>;
pub type AnnotationsByImage = BTreeMap<String, Vec<SignAnnotation>>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("recall denominator is zero: {0}")]
    EmptyDenominator(&'static str),
    #[error("thresholds must be strictly increasing values in [0, 1]")]
    InvalidThresholds,
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Protocol settings: hit IoU, per-image cap, and the threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub iou_threshold: f64,
    pub max_dets: usize,
    pub thresholds: Vec<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_threshold: crate::matching::DEFAULT_IOU_THRESHOLD,
            max_dets: crate::matching::DEFAULT_MAX_DETS,
            thresholds: default_thresholds(),
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(format!("iou_threshold must lie in (0, 1], got {}", self.iou_threshold));
        }
        if self.max_dets == 0 {
            return Err("max_dets must be positive".into());
        }
        if !thresholds_valid(&self.thresholds) {
            return Err("thresholds must be strictly increasing values in [0, 1]".into());
        }
        Ok(())
    }
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn thresholds_valid(ts: &[f64]) -> bool {
    ts.iter().all(|t| (0.0..=1.0).contains(t)) && ts.windows(2).all(|w| w[0] < w[1])
}

pub fn group_detections(dets: impl IntoIterator<Item = Detection>) -> DetectionsByImage {
    let mut out = DetectionsByImage::new();
    for d in dets {
        out.entry(d.image_id.clone()).or_default().push(d);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp_all: u64,
    pub fp: u64,
    pub fn_all: u64,
    pub tp_salient: u64,
    pub n_salient_gt: u64,
}

impl ConfusionCounts {
    pub fn n_gt(&self) -> u64 {
        self.tp_all + self.fn_all
    }

    pub fn n_considered(&self) -> u64 {
        self.tp_all + self.fp
    }

    fn add(&mut self, o: &ConfusionCounts) {
        self.tp_all += o.tp_all;
        self.fp += o.fp;
        self.fn_all += o.fn_all;
        self.tp_salient += o.tp_salient;
        self.n_salient_gt += o.n_salient_gt;
    }
}

fn confusion_for_image(
    dets: &[Detection],
    gts: &[SignAnnotation],
    t: f64,
    params: &EvalParams,
) -> Result<ConfusionCounts, MatchError> {
    let surviving: Vec<Detection> = dets.iter().filter(|d| d.score >= t).cloned().collect();
    let m = match_image(&surviving, gts, params.iou_threshold, params.max_dets)?;
    let salient: BTreeSet<&str> = gts
        .iter()
        .filter(|g| g.salient)
        .map(|g| g.id.as_str())
        .collect();
    Ok(ConfusionCounts {
        tp_all: m.matched_pairs.len() as u64,
        fp: m.unmatched_detections.len() as u64,
        fn_all: m.unmatched_annotations.len() as u64,
        tp_salient: m
            .matched_pairs
            .iter()
            .filter(|p| salient.contains(p.annotation_id.as_str()))
            .count() as u64,
        n_salient_gt: salient.len() as u64,
    })
}

/// Counts summed over every image that has detections or annotations, in
/// image-id order.
pub fn confusion_at_threshold(
    dets_by_image: &DetectionsByImage,
    gts_by_image: &AnnotationsByImage,
    t: f64,
    params: &EvalParams,
) -> Result<ConfusionCounts, EvalError> {
    let images: BTreeSet<&String> = dets_by_image.keys().chain(gts_by_image.keys()).collect();
    let mut total = ConfusionCounts::default();
    for id in images {
        let dets = dets_by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let gts = gts_by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
        total.add(&confusion_for_image(dets, gts, t, params)?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall_all: f64,
    pub recall_salient: f64,
    pub margin: f64,
}

impl PrPoint {
    fn from_counts(threshold: f64, c: &ConfusionCounts) -> Self {
        let precision = c.tp_all as f64 / c.n_considered() as f64;
        let recall_all = c.tp_all as f64 / c.n_gt() as f64;
        let recall_salient = c.tp_salient as f64 / c.n_salient_gt as f64;
        Self {
            threshold,
            precision,
            recall_all,
            recall_salient,
            margin: recall_salient - recall_all,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveMeta {
    pub dataset_id: String,
    pub model_id: String,
    pub loss_mode: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub meta: CurveMeta,
    /// Ascending threshold order.
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn mean_margin(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.margin).sum::<f64>() / self.points.len() as f64
    }
}

/// One point per threshold, stopping before the first threshold at which no
/// detection survives.
pub fn pr_sweep(
    dets_by_image: &DetectionsByImage,
    gts_by_image: &AnnotationsByImage,
    params: &EvalParams,
    meta: CurveMeta,
) -> Result<PrCurve, EvalError> {
    if !thresholds_valid(&params.thresholds) {
        return Err(EvalError::InvalidThresholds);
    }
    let n_gt: usize = gts_by_image.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(EvalError::EmptyDenominator("no ground-truth annotations"));
    }
    if !gts_by_image.values().flatten().any(|g| g.salient) {
        return Err(EvalError::EmptyDenominator("no salient ground-truth annotations"));
    }
    let mut points = Vec::with_capacity(params.thresholds.len());
    for &t in &params.thresholds {
        let c = confusion_at_threshold(dets_by_image, gts_by_image, t, params)?;
        if c.n_considered() == 0 {
            break;
        }
        points.push(PrPoint::from_counts(t, &c));
    }
    Ok(PrCurve { meta, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallAxis {
    All,
    Salient,
}

/// Trapezoidal area under precision as a function of recall, over the recall
/// span the curve actually covers. Points are sorted by ascending recall
/// (descending precision among equal recalls), so input order is irrelevant.
/// Curves with fewer than two points have zero area.
pub fn auc(curve: &PrCurve, axis: RecallAxis) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| {
            let r = match axis {
                RecallAxis::All => p.recall_all,
                RecallAxis::Salient => p.recall_salient,
            };
            (r, p.precision)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    area.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFormat {
    Csv,
    Svg,
}

pub const CSV_HEADER: &str = "threshold,precision,recall_all,recall_salient,margin";

pub fn curve_to_csv(curve: &PrCurve) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in &curve.points {
        writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.threshold, p.precision, p.recall_all, p.recall_salient, p.margin
        )
        .unwrap();
    }
    s
}

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 200.0;
const MARGIN_L: f64 = 50.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 70.0;

struct Panel {
    title: &'static str,
    y_label: &'static str,
    y_min: f64,
    y_max: f64,
    color: &'static str,
}

/// Three panels sharing a precision x-axis: all-sign recall, salient-sign
/// recall, and the recall margin.
pub fn curve_to_svg(curve: &PrCurve) -> String {
    let panels = [
        Panel {
            title: "All Sign Recall vs. Precision",
            y_label: "recall (all)",
            y_min: 0.0,
            y_max: 1.0,
            color: "#1f77b4",
        },
        Panel {
            title: "Salient Sign Recall vs. Precision",
            y_label: "recall (salient)",
            y_min: 0.0,
            y_max: 1.0,
            color: "#d62728",
        },
        Panel {
            title: "Salient Minus All Recall vs. Precision",
            y_label: "recall margin",
            y_min: -1.0,
            y_max: 1.0,
            color: "#2ca02c",
        },
    ];
    let width = MARGIN_L + 3.0 * PANEL_W + 2.0 * GAP + 20.0;
    let height = MARGIN_T + PANEL_H + 60.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let label = format!(
        "{} / {} / {}",
        escape(&curve.meta.dataset_id),
        escape(&curve.meta.model_id),
        escape(&curve.meta.loss_mode)
    );
    writeln!(s, r#"<text x="{MARGIN_L:.0}" y="16">{label}</text>"#).unwrap();

    for (k, panel) in panels.iter().enumerate() {
        let x0 = MARGIN_L + k as f64 * (PANEL_W + GAP);
        let y0 = MARGIN_T;
        let sx = |p: f64| x0 + p * PANEL_W;
        let sy = |v: f64| y0 + PANEL_H * (panel.y_max - v) / (panel.y_max - panel.y_min);
        writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#444"/>"##
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 8.0,
            panel.title
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">precision</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 32.0
        )
        .unwrap();
        let (lx, ly) = (x0 - 34.0, y0 + PANEL_H / 2.0);
        writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            panel.y_label
        )
        .unwrap();
        for tick in [0.0, 0.5, 1.0] {
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{tick:.1}</text>"#,
                sx(tick),
                y0 + PANEL_H + 14.0
            )
            .unwrap();
        }
        let mid = (panel.y_min + panel.y_max) / 2.0;
        for tick in [panel.y_min, mid, panel.y_max] {
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.1}</text>"#,
                x0 - 4.0,
                sy(tick) + 4.0
            )
            .unwrap();
        }
        if panel.y_min < 0.0 {
            writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#aaa" stroke-dasharray="3,3"/>"##,
                sx(0.0),
                sy(0.0),
                sx(1.0),
                sy(0.0)
            )
            .unwrap();
        }
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| {
                let v = match k {
                    0 => p.recall_all,
                    1 => p.recall_salient,
                    _ => p.margin,
                };
                format!("{:.2},{:.2}", sx(p.precision), sy(v))
            })
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            panel.color,
            pts.join(" ")
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn emit_curve(curve: &PrCurve, format: CurveFormat, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let body = match format {
        CurveFormat::Csv => curve_to_csv(curve),
        CurveFormat::Svg => curve_to_svg(curve),
    };
    write_atomic(path, body.as_bytes()).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
