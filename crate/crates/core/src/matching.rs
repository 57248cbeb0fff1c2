//! Greedy one-to-one matching of detections to ground-truth annotations.
//!
//! Detections are capped per image, visited in descending score order (ties
//! keep input order), and each claims the still-unclaimed annotation with
//! the highest IoU at or above the hit threshold. IoU ties go to the
//! lexicographically smallest annotation id. Categories and salience play
//! no part in matching.

use std::cmp::Ordering;

use thiserror::Error;

use crate::dataset::SignAnnotation;
use crate::geometry::{BBox, GeometryError};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_DETS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("detections and annotations span several images: {0:?} and {1:?}")]
    MixedImages(String, String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("detection score must lie in [0, 1], got {0}")]
    Score(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: String, bbox: [f64; 4], score: f64) -> Result<Self, DetectionError> {
        Self::from_box(image_id, BBox::try_from(bbox)?, score)
    }

    pub fn from_box(image_id: String, bbox: BBox, score: f64) -> Result<Self, DetectionError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectionError::Score(score));
        }
        Ok(Self {
            image_id,
            bbox,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    /// Index into the detection list passed to [`match_image`].
    pub detection: usize,
    pub annotation_id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// In the order detections were visited (descending score).
    pub matched_pairs: Vec<MatchedPair>,
    /// False positives, in visiting order.
    pub unmatched_detections: Vec<usize>,
    /// False negatives, in input order.
    pub unmatched_annotations: Vec<String>,
}

fn check_single_image<'a>(
    mut ids: impl Iterator<Item = &'a str>,
) -> Result<Option<&'a str>, MatchError> {
    let Some(first) = ids.next() else {
        return Ok(None);
    };
    for id in ids {
        if id != first {
            return Err(MatchError::MixedImages(first.to_string(), id.to_string()));
        }
    }
    Ok(Some(first))
}

/// Indices of the `max_dets` highest-scoring detections, best first; equal
/// scores keep input order.
pub fn capped_order(dets: &[Detection], max_dets: usize) -> Result<Vec<usize>, MatchError> {
    check_single_image(dets.iter().map(|d| d.image_id.as_str()))?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // sort_by is stable
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
    });
    order.truncate(max_dets);
    Ok(order)
}

pub fn cap_detections(dets: &[Detection], max_dets: usize) -> Result<Vec<Detection>, MatchError> {
    Ok(capped_order(dets, max_dets)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}

pub fn match_image(
    dets: &[Detection],
    gts: &[SignAnnotation],
    iou_threshold: f64,
    max_dets: usize,
) -> Result<MatchResult, MatchError> {
    let det_image = check_single_image(dets.iter().map(|d| d.image_id.as_str()))?;
    let gt_image = check_single_image(gts.iter().map(|g| g.image_id.as_str()))?;
    if let (Some(a), Some(b)) = (det_image, gt_image) {
        if a != b {
            return Err(MatchError::MixedImages(a.to_string(), b.to_string()));
        }
    }

    let order = capped_order(dets, max_dets)?;

    // Visit annotations in id order so the first strictly-better IoU wins ties.
    let mut gt_by_id: Vec<usize> = (0..gts.len()).collect();
    gt_by_id.sort_by(|&a, &b| gts[a].id.cmp(&gts[b].id));

    let mut claimed = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for &di in &order {
        let dbox = &dets[di].bbox;
        let mut best: Option<(usize, f64)> = None;
        for &gi in &gt_by_id {
            if claimed[gi] {
                continue;
            }
            let v = dbox.iou(&gts[gi].bbox);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) => {
                claimed[gi] = true;
                result.matched_pairs.push(MatchedPair {
                    detection: di,
                    annotation_id: gts[gi].id.clone(),
                    iou: v,
                });
            }
            None => result.unmatched_detections.push(di),
        }
    }
    result.unmatched_annotations = gts
        .iter()
        .zip(&claimed)
        .filter(|(_, &c)| !c)
        .map(|(g, _)| g.id.clone())
        .collect();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SignCategory;

    fn det(bbox: [f64; 4], score: f64) -> Detection {
        Detection::new("im".into(), bbox, score).unwrap()
    }

    fn gt(id: &str, bbox: [f64; 4]) -> SignAnnotation {
        SignAnnotation {
            id: id.into(),
            image_id: "im".into(),
            bbox: BBox::try_from(bbox).unwrap(),
            category: SignCategory::Stop,
            salient: false,
            occluded: None,
        }
    }

    #[test]
    fn cap_under_limit_sorts_by_score() {
        let dets = vec![
            det([0.0, 0.0, 1.0, 1.0], 0.2),
            det([0.0, 0.0, 2.0, 2.0], 0.9),
            det([0.0, 0.0, 3.0, 3.0], 0.5),
        ];
        let capped = cap_detections(&dets, 100).unwrap();
        let scores: Vec<f64> = capped.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.5, 0.2]);
    }

    #[test]
    fn cap_keeps_top_hundred() {
        let dets: Vec<Detection> = (0..150)
            .map(|i| det([0.0, 0.0, 1.0, 1.0], ((i * 37) % 150) as f64 / 150.0))
            .collect();
        let capped = cap_detections(&dets, 100).unwrap();
        assert_eq!(capped.len(), 100);
        let min_kept = capped.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
        let dropped = dets.iter().filter(|d| d.score < min_kept).count();
        assert_eq!(dropped, 50);
    }

    #[test]
    fn cap_is_stable_for_equal_scores() {
        let dets = vec![
            det([0.0, 0.0, 1.0, 1.0], 0.5),
            det([0.0, 0.0, 2.0, 2.0], 0.5),
        ];
        let capped = cap_detections(&dets, 100).unwrap();
        assert_eq!(capped, dets);
    }

    #[test]
    fn mixed_images_rejected() {
        let dets = vec![
            det([0.0, 0.0, 1.0, 1.0], 0.5),
            Detection::new("other".into(), [0.0, 0.0, 1.0, 1.0], 0.5).unwrap(),
        ];
        assert!(matches!(cap_detections(&dets, 10), Err(MatchError::MixedImages(..))));
        let g = SignAnnotation {
            image_id: "other".into(),
            ..gt("g", [0.0, 0.0, 1.0, 1.0])
        };
        assert!(matches!(
            match_image(&dets[..1], &[g], 0.5, 100),
            Err(MatchError::MixedImages(..))
        ));
    }

    #[test]
    fn exact_box_is_a_hit() {
        let r = match_image(&[det([0.0, 0.0, 10.0, 10.0], 0.7)], &[gt("g1", [0.0, 0.0, 10.0, 10.0])], 0.5, 100)
            .unwrap();
        assert_eq!(
            r.matched_pairs,
            vec![MatchedPair { detection: 0, annotation_id: "g1".into(), iou: 1.0 }]
        );
        assert!(r.unmatched_detections.is_empty() && r.unmatched_annotations.is_empty());
    }

    #[test]
    fn below_threshold_is_miss_on_both_sides() {
        // [0,10]x[0,10] vs [0,10]x[0,4]: iou 0.4
        let g = gt("g1", [0.0, 0.0, 10.0, 10.0]);
        let d = det([0.0, 0.0, 10.0, 4.0], 0.9);
        assert!((d.bbox.iou(&g.bbox) - 0.4).abs() < 1e-12);
        let r = match_image(&[d], &[g], 0.5, 100).unwrap();
        assert!(r.matched_pairs.is_empty());
        assert_eq!(r.unmatched_detections, vec![0]);
        assert_eq!(r.unmatched_annotations, vec!["g1".to_string()]);
    }

    #[test]
    fn higher_score_claims_first() {
        let g = gt("g1", [0.0, 0.0, 10.0, 10.0]);
        let d1 = det([0.0, 0.0, 10.0, 6.0], 0.9); // iou 0.6
        let d2 = det([0.0, 0.0, 10.0, 5.5], 0.8); // iou 0.55
        assert!((d1.bbox.iou(&g.bbox) - 0.6).abs() < 1e-12);
        assert!((d2.bbox.iou(&g.bbox) - 0.55).abs() < 1e-12);
        // listed in reverse to check ordering is by score
        let r = match_image(&[d2, d1], &[g], 0.5, 100).unwrap();
        assert_eq!(r.matched_pairs.len(), 1);
        assert_eq!(r.matched_pairs[0].detection, 1);
        assert_eq!(r.unmatched_detections, vec![0]);
    }

    #[test]
    fn iou_ties_go_to_smallest_id() {
        let gts = vec![gt("b", [0.0, 0.0, 10.0, 10.0]), gt("a", [0.0, 0.0, 10.0, 10.0])];
        let r = match_image(&[det([0.0, 0.0, 10.0, 10.0], 0.5)], &gts, 0.5, 100).unwrap();
        assert_eq!(r.matched_pairs[0].annotation_id, "a");
        assert_eq!(r.unmatched_annotations, vec!["b".to_string()]);
    }

    #[test]
    fn cap_limits_considered_detections() {
        let gts = vec![gt("g", [0.0, 0.0, 10.0, 10.0])];
        let dets = vec![det([50.0, 50.0, 60.0, 60.0], 0.9), det([0.0, 0.0, 10.0, 10.0], 0.1)];
        let r = match_image(&dets, &gts, 0.5, 1).unwrap();
        assert!(r.matched_pairs.is_empty());
        assert_eq!(r.unmatched_detections, vec![0]);
        assert_eq!(r.unmatched_annotations.len(), 1);
    }
}
