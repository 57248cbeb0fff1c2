//! Seeded synthetic scenes whose salient signs concentrate in a corridor.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord, SignAnnotation, SignCategory};
use crate::geometry::BBox;

use super::anchors::AnchorGrid;
use super::features::FeatureStore;
use super::SynthError;

/// Stream reserved for category prototypes; scenes use their index.
const PROTOTYPE_STREAM: u64 = u64::MAX;
const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Minimum IoU between an anchor and a sign for the sign's appearance to
/// reach the anchor's features.
pub const FEATURE_IOU_RADIUS: f64 = 0.3;
/// Spread of category prototypes around their shared direction.
const PROTOTYPE_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGenConfig {
    pub width: u32,
    pub height: u32,
    /// `[x_min, y_min, x_max, y_max]` region holding salient sign centers.
    pub corridor: [f64; 4],
    /// Inclusive `[min, max]` signs attempted per scene.
    pub signs_per_scene: [u32; 2],
    /// Probability that a sign is salient (and therefore placed in the corridor).
    pub salient_fraction: f64,
    /// Inclusive `[min, max]` side length of the square signs, in px.
    pub sign_size: [f64; 2],
    pub appearance_dim: usize,
    pub appearance_noise_sigma: f64,
    /// Expected number of distractor bumps per scene.
    pub clutter_rate: f64,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            corridor: [64.0, 8.0, 96.0, 56.0],
            signs_per_scene: [2, 5],
            salient_fraction: 0.5,
            sign_size: [12.0, 16.0],
            appearance_dim: 6,
            appearance_noise_sigma: 0.5,
            clutter_rate: 2.0,
            seed: 0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.width == 0 || self.height == 0 {
            return err("image size must be positive".into());
        }
        let corridor = match BBox::try_from(self.corridor) {
            Ok(c) => c,
            Err(e) => return err(format!("corridor: {e}")),
        };
        if !corridor.within_image(self.width as f64, self.height as f64) {
            return err(format!(
                "corridor {:?} lies outside the {}x{} image",
                self.corridor, self.width, self.height
            ));
        }
        let [lo, hi] = self.sign_size;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return err(format!("sign_size must be 0 < min <= max, got {:?}", self.sign_size));
        }
        if hi > self.width as f64 || hi > self.height as f64 {
            return err("largest sign does not fit in the image".into());
        }
        // Salient centers must be placeable for the largest sign.
        if feasible_range(corridor.x_min(), corridor.x_max(), hi, self.width).is_none()
            || feasible_range(corridor.y_min(), corridor.y_max(), hi, self.height).is_none()
        {
            return err("corridor leaves no room to place the largest sign inside the image".into());
        }
        if self.signs_per_scene[0] > self.signs_per_scene[1] {
            return err(format!("signs_per_scene min > max: {:?}", self.signs_per_scene));
        }
        if !(0.0..=1.0).contains(&self.salient_fraction) {
            return err(format!("salient_fraction must lie in [0, 1], got {}", self.salient_fraction));
        }
        if self.appearance_dim < 2 {
            return err(format!("appearance_dim must be >= 2, got {}", self.appearance_dim));
        }
        if !(self.appearance_noise_sigma.is_finite() && self.appearance_noise_sigma > 0.0) {
            return err("appearance_noise_sigma must be positive".into());
        }
        if !(self.clutter_rate.is_finite() && self.clutter_rate >= 0.0) {
            return err("clutter_rate must be non-negative".into());
        }
        Ok(())
    }

    pub fn corridor_box(&self) -> BBox {
        BBox::try_from(self.corridor).expect("validated corridor")
    }

    pub fn feature_dim(&self) -> usize {
        self.appearance_dim + 2
    }

    /// One prototype appearance vector per category, shared by all scenes of
    /// this seed: a common unit direction plus Gaussian per-category spread.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(PROTOTYPE_STREAM);
        let normal = Normal::new(0.0, PROTOTYPE_SPREAD).expect("valid spread");
        let shared = 1.0 / (self.appearance_dim as f64).sqrt();
        SignCategory::ALL
            .iter()
            .map(|_| {
                (0..self.appearance_dim)
                    .map(|_| shared + normal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }
}

/// Interval of centers along one axis that keep a sign of side `size`
/// inside `[0, extent]` and inside `[lo, hi]`.
fn feasible_range(lo: f64, hi: f64, size: f64, extent: u32) -> Option<(f64, f64)> {
    let a = lo.max(size / 2.0);
    let b = hi.min(extent as f64 - size / 2.0);
    (a <= b).then_some((a, b))
}

fn sample_in(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..=b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub record: ImageRecord,
    /// Row-major `anchor_count x feature_dim` table.
    pub features: Vec<f32>,
}

pub fn scene_image_id(scene_index: u64) -> String {
    format!("scene-{scene_index:06}")
}

pub fn gen_scene(
    cfg: &SceneGenConfig,
    grid: &AnchorGrid,
    scene_index: u64,
) -> Result<SyntheticScene, SynthError> {
    cfg.validate()?;
    gen_scene_with(cfg, grid, scene_index, &cfg.prototypes())
}

fn gen_scene_with(
    cfg: &SceneGenConfig,
    grid: &AnchorGrid,
    scene_index: u64,
    prototypes: &[Vec<f64>],
) -> Result<SyntheticScene, SynthError> {
    if grid.width() != cfg.width || grid.height() != cfg.height {
        return Err(SynthError::Config(format!(
            "anchor grid is {}x{} but scenes are {}x{}",
            grid.width(),
            grid.height(),
            cfg.width,
            cfg.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(scene_index);
    let image_id = scene_image_id(scene_index);
    let corridor = cfg.corridor_box();
    let categories: Vec<usize> = (0..SignCategory::ALL.len())
        .filter(|&i| SignCategory::ALL[i] != SignCategory::Undefined)
        .collect();

    let n_signs = rng.random_range(cfg.signs_per_scene[0]..=cfg.signs_per_scene[1]);
    let mut annotations: Vec<SignAnnotation> = Vec::new();
    let mut appearances: Vec<Vec<f64>> = Vec::new();
    let noise = Normal::new(0.0, cfg.appearance_noise_sigma).expect("validated sigma");
    for k in 0..n_signs {
        let salient = rng.random_bool(cfg.salient_fraction);
        let side = sample_in(&mut rng, (cfg.sign_size[0], cfg.sign_size[1]));
        let (region_x, region_y) = if salient {
            ((corridor.x_min(), corridor.x_max()), (corridor.y_min(), corridor.y_max()))
        } else {
            ((0.0, cfg.width as f64), (0.0, cfg.height as f64))
        };
        let xr = feasible_range(region_x.0, region_x.1, side, cfg.width);
        let yr = feasible_range(region_y.0, region_y.1, side, cfg.height);
        let (Some(xr), Some(yr)) = (xr, yr) else {
            continue;
        };
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cx = sample_in(&mut rng, xr);
            let cy = sample_in(&mut rng, yr);
            let b = BBox::from_center(cx, cy, side, side).expect("positive side");
            if annotations.iter().all(|a| a.bbox.intersection_area(&b) == 0.0) {
                placed = Some(b);
                break;
            }
        }
        let Some(bbox) = placed else {
            continue;
        };
        let cat_index = *categories.choose(&mut rng).expect("non-empty category list");
        let appearance: Vec<f64> = prototypes[cat_index]
            .iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        annotations.push(SignAnnotation {
            id: format!("{image_id}-{k}"),
            image_id: image_id.clone(),
            bbox,
            category: SignCategory::ALL[cat_index],
            salient,
            occluded: None,
        });
        appearances.push(appearance);
    }

    let dim = cfg.feature_dim();
    let app_dim = cfg.appearance_dim;
    let n_anchors = grid.len();
    let mut table = vec![0.0f64; n_anchors * dim];
    for (a, row) in table.chunks_mut(dim).enumerate() {
        for v in row[..app_dim].iter_mut() {
            *v = noise.sample(&mut rng);
        }
        let (nx, ny) = grid.normalized_center(a);
        row[app_dim] = nx;
        row[app_dim + 1] = ny;
    }
    for (ann, appearance) in annotations.iter().zip(&appearances) {
        for (a, anchor) in grid.anchors().iter().enumerate() {
            let v = anchor.iou(&ann.bbox);
            if v >= FEATURE_IOU_RADIUS {
                let row = &mut table[a * dim..a * dim + app_dim];
                for (f, x) in row.iter_mut().zip(appearance) {
                    *f += v * x;
                }
            }
        }
    }
    let clutter = if cfg.clutter_rate > 0.0 {
        Poisson::new(cfg.clutter_rate).expect("validated rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..clutter {
        let a = rng.random_range(0..n_anchors);
        let proto = &prototypes[*categories.choose(&mut rng).expect("categories")];
        let strength: f64 = rng.random_range(0.5..1.0);
        let row = &mut table[a * dim..a * dim + app_dim];
        for (f, x) in row.iter_mut().zip(proto) {
            *f += strength * x;
        }
    }

    Ok(SyntheticScene {
        record: ImageRecord {
            image_id,
            width: cfg.width,
            height: cfg.height,
            source_clip: None,
            annotations,
        },
        features: table.into_iter().map(|v| v as f32).collect(),
    })
}

/// Scenes `first_index .. first_index + n_scenes` as a dataset plus its
/// feature sidecar.
pub fn gen_dataset(
    cfg: &SceneGenConfig,
    grid: &AnchorGrid,
    first_index: u64,
    n_scenes: usize,
) -> Result<(Dataset, FeatureStore), SynthError> {
    if n_scenes == 0 {
        return Err(SynthError::Config("n_scenes must be at least 1".into()));
    }
    cfg.validate()?;
    let prototypes = cfg.prototypes();
    let mut ds = Dataset::empty();
    let mut store = FeatureStore::new(cfg.feature_dim(), grid.len());
    for i in 0..n_scenes as u64 {
        let scene = gen_scene_with(cfg, grid, first_index + i, &prototypes)?;
        store.insert(scene.record.image_id.clone(), scene.features)?;
        ds.images.push(scene.record);
    }
    Ok((ds, store))
}
