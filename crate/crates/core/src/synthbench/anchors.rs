use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

use super::SynthError;

/// Grid layout: anchor centers every `stride` px, one square anchor per
/// size at each center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub stride: f64,
    pub sizes: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            stride: 4.0,
            sizes: vec![12.0, 14.0, 16.0],
        }
    }
}

/// Fixed candidate boxes tiling an image, in row-major center order with
/// sizes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    width: u32,
    height: u32,
    config: GridConfig,
    anchors: Vec<BBox>,
}

impl AnchorGrid {
    pub fn new(width: u32, height: u32, config: &GridConfig) -> Result<Self, SynthError> {
        if !(config.stride.is_finite() && config.stride > 0.0) {
            return Err(SynthError::Config(format!(
                "anchor stride must be positive, got {}",
                config.stride
            )));
        }
        if config.sizes.is_empty() || config.sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SynthError::Config(
                "anchor sizes must be a non-empty list of positive values".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(SynthError::Config("image size must be positive".into()));
        }
        let nx = (width as f64 / config.stride).ceil() as usize;
        let ny = (height as f64 / config.stride).ceil() as usize;
        let mut anchors = Vec::with_capacity(nx * ny * config.sizes.len());
        for j in 0..ny {
            let cy = (j as f64 + 0.5) * config.stride;
            for i in 0..nx {
                let cx = (i as f64 + 0.5) * config.stride;
                for &s in &config.sizes {
                    anchors.push(BBox::from_center(cx, cy, s, s).expect("positive anchor size"));
                }
            }
        }
        Ok(Self {
            width,
            height,
            config: config.clone(),
            anchors,
        })
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Anchor center normalized to `[0, 1]` image coordinates.
    pub fn normalized_center(&self, index: usize) -> (f64, f64) {
        let (cx, cy) = self.anchors[index].center();
        (cx / self.width as f64, cy / self.height as f64)
    }

    pub fn best_iou(&self, b: &BBox) -> f64 {
        self.anchors.iter().map(|a| a.iou(b)).fold(0.0, f64::max)
    }
}
