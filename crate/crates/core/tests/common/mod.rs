//! Independent oracles and random fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salsign::dataset::{Dataset, DeclaredCounts, ImageRecord, SignAnnotation, SignCategory};
use salsign::evaluation::{AnnotationsByImage, DetectionsByImage};
use salsign::matching::{Detection, MatchResult, MatchedPair};
use salsign::BBox;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Intersection-over-union from first principles on `[x0, y0, x1, y1]`.
pub fn naive_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy matching written directly from the rules: take detections by
/// descending score (earlier input first on ties), keep at most `max_dets`,
/// and let each claim the free annotation with the largest IoU not below
/// the threshold, smallest id first among equal IoUs.
pub fn naive_match(
    dets: &[Detection],
    gts: &[SignAnnotation],
    iou_threshold: f64,
    max_dets: usize,
) -> MatchResult {
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut order = Vec::new();
    while !remaining.is_empty() && order.len() < max_dets {
        let mut pick = 0;
        for k in 1..remaining.len() {
            if dets[remaining[k]].score > dets[remaining[pick]].score {
                pick = k;
            }
        }
        order.push(remaining.remove(pick));
    }

    let mut taken = vec![false; gts.len()];
    let mut out = MatchResult::default();
    for &d in &order {
        let mut candidates: Vec<(f64, &str, usize)> = Vec::new();
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = naive_iou(dets[d].bbox.to_array(), gt.bbox.to_array());
            if iou >= iou_threshold {
                candidates.push((iou, gt.id.as_str(), g));
            }
        }
        let best = candidates.into_iter().reduce(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });
        match best {
            Some((iou, id, g)) => {
                taken[g] = true;
                out.matched_pairs.push(MatchedPair {
                    detection: d,
                    annotation_id: id.to_string(),
                    iou,
                });
            }
            None => out.unmatched_detections.push(d),
        }
    }
    out.unmatched_annotations = gts
        .iter()
        .enumerate()
        .filter(|(g, _)| !taken[*g])
        .map(|(_, gt)| gt.id.clone())
        .collect();
    out
}

pub fn annotation(id: &str, image: &str, bbox: [f64; 4], salient: bool) -> SignAnnotation {
    SignAnnotation {
        id: id.into(),
        image_id: image.into(),
        bbox: BBox::try_from(bbox).unwrap(),
        category: SignCategory::Stop,
        salient,
        occluded: None,
    }
}

pub fn detection(image: &str, bbox: [f64; 4], score: f64) -> Detection {
    Detection::new(image.into(), bbox, score).unwrap()
}

/// Box on a coarse integer lattice so that IoU ties and exact overlaps occur.
pub fn lattice_box(r: &mut impl Rng, extent: i32) -> [f64; 4] {
    let x0 = r.random_range(0..extent - 1);
    let y0 = r.random_range(0..extent - 1);
    let x1 = r.random_range(x0 + 1..=extent);
    let y1 = r.random_range(y0 + 1..=extent);
    [x0 as f64, y0 as f64, x1 as f64, y1 as f64]
}

/// Up to six detections and six annotations on one image, with coarse
/// scores and shuffled annotation ids.
pub fn match_instance(r: &mut impl Rng) -> (Vec<Detection>, Vec<SignAnnotation>) {
    let n_det = r.random_range(0..=6);
    let n_gt = r.random_range(0..=6);
    let mut ids: Vec<String> = (0..n_gt).map(|i| format!("g{i}")).collect();
    ids.shuffle(r);
    let gts: Vec<SignAnnotation> = ids
        .iter()
        .map(|id| annotation(id, "im", lattice_box(r, 6), r.random_bool(0.5)))
        .collect();
    let dets: Vec<Detection> = (0..n_det)
        .map(|_| {
            let bbox = if !gts.is_empty() && r.random_bool(0.6) {
                // Near-copies of an annotation make hits likely.
                let g = gts[r.random_range(0..gts.len())].bbox.to_array();
                let dx = r.random_range(-1..=1) as f64;
                [g[0], g[1], (g[2] + dx).max(g[0] + 1.0), g[3]]
            } else {
                lattice_box(r, 6)
            };
            detection("im", bbox, r.random_range(0..=4) as f64 / 4.0)
        })
        .collect();
    (dets, gts)
}

/// Several images of random annotations and scored detections.
pub fn eval_instance(r: &mut impl Rng) -> (DetectionsByImage, AnnotationsByImage) {
    let mut dets = DetectionsByImage::new();
    let mut gts = AnnotationsByImage::new();
    let n_images = r.random_range(1..=5);
    for i in 0..n_images {
        let image = format!("img{i}");
        let anns: Vec<SignAnnotation> = (0..r.random_range(1..=5))
            .map(|k| annotation(&format!("{image}-{k}"), &image, lattice_box(r, 12), r.random_bool(0.5)))
            .collect();
        let ds: Vec<Detection> = (0..r.random_range(0..=8))
            .map(|_| {
                let bbox = if r.random_bool(0.5) {
                    anns[r.random_range(0..anns.len())].bbox.to_array()
                } else {
                    lattice_box(r, 12)
                };
                detection(&image, bbox, r.random::<f64>())
            })
            .collect();
        gts.insert(image.clone(), anns);
        if !ds.is_empty() {
            dets.insert(image, ds);
        }
    }
    // Guarantee at least one salient annotation somewhere.
    gts.values_mut().next().unwrap()[0].salient = true;
    (dets, gts)
}

/// Dataset with the given salient and non-salient sign counts, spread over
/// images of at most `per_image` signs each.
pub fn counted_dataset(salient: usize, non_salient: usize, per_image: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut flags: Vec<bool> = std::iter::repeat_n(true, salient)
        .chain(std::iter::repeat_n(false, non_salient))
        .collect();
    flags.shuffle(&mut r);
    let cats: Vec<SignCategory> = SignCategory::ALL.to_vec();
    let images = flags
        .chunks(per_image)
        .enumerate()
        .map(|(i, chunk)| {
            let image_id = format!("frame-{i:06}");
            let annotations = chunk
                .iter()
                .enumerate()
                .map(|(k, &s)| SignAnnotation {
                    id: format!("{image_id}-{k}"),
                    image_id: image_id.clone(),
                    bbox: BBox::new(10.0 * k as f64, 0.0, 10.0 * k as f64 + 8.0, 8.0).unwrap(),
                    category: cats[r.random_range(0..cats.len())],
                    salient: s,
                    occluded: None,
                })
                .collect();
            ImageRecord {
                image_id,
                width: 1920,
                height: 1080,
                source_clip: Some(format!("clip-{}", i / 50)),
                annotations,
            }
        })
        .collect();
    Dataset {
        images,
        declared_counts: Some(DeclaredCounts {
            total: (salient + non_salient) as u64,
            salient: salient as u64,
            non_salient: non_salient as u64,
        }),
    }
}
