//! Linear-logit anchor scorer trained by full-batch gradient descent under
//! focal loss or salience-sensitive focal loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SignAnnotation};
use crate::losses::{
    focal_loss, focal_loss_grad, salience_weight, FocalParams, LossMode, Probability,
    SalienceParams,
};
use crate::matching::{cap_detections, Detection};

use super::anchors::AnchorGrid;
use super::features::FeatureStore;
use super::SynthError;

/// Anchors per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub lr_decay_factor: f64,
    pub lr_milestones: Vec<usize>,
    /// Recorded with the model. Training itself draws no random numbers.
    pub seed: u64,
    pub loss_mode: LossMode,
    pub focal: FocalParams,
    pub salience: SalienceParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5.0,
            epochs: 200,
            grad_clip_norm: 5.0,
            lr_decay_factor: 0.5,
            lr_milestones: vec![100, 150],
            seed: 0,
            loss_mode: LossMode::Ssfl,
            focal: FocalParams::default(),
            salience: SalienceParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1");
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return err("grad_clip_norm must be positive");
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return err("lr_decay_factor must be positive");
        }
        self.focal
            .validate()
            .map_err(|e| SynthError::Config(e.to_string()))?;
        self.salience
            .validate()
            .map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelWeights {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModelWeights {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, features: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, &f)| w * f as f64)
            .sum::<f64>()
            + self.bias
    }

    pub fn score(&self, features: &[f32]) -> f64 {
        logistic(self.logit(features))
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabel {
    pub positive: bool,
    pub salience_weight: f64,
}

/// Positive iff the anchor reaches the hit IoU against some annotation;
/// every anchor carries the salience weight of its nearest annotation.
pub fn assign_labels(
    grid: &AnchorGrid,
    gts: &[SignAnnotation],
    sp: &SalienceParams,
    hit_iou: f64,
) -> Vec<AnchorLabel> {
    grid.anchors()
        .iter()
        .map(|a| AnchorLabel {
            positive: gts.iter().any(|g| a.iou(&g.bbox) >= hit_iou),
            salience_weight: salience_weight(a, gts, sp),
        })
        .collect()
}

/// All anchors of all scenes, flattened in dataset order.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    dim: usize,
    features: Vec<f32>,
    positive: Vec<bool>,
    weights: Vec<f64>,
}

impl TrainingSet {
    /// Salience weights are taken from `sp` in SSFL mode and fixed at 1 in
    /// FL mode.
    pub fn build(
        ds: &Dataset,
        store: &FeatureStore,
        grid: &AnchorGrid,
        sp: &SalienceParams,
        mode: LossMode,
        hit_iou: f64,
    ) -> Result<Self, SynthError> {
        if store.anchor_count() != grid.len() {
            return Err(SynthError::Features(format!(
                "feature store has {} anchors per scene, grid has {}",
                store.anchor_count(),
                grid.len()
            )));
        }
        let dim = store.feature_dim();
        let n = ds.images.len() * grid.len();
        let mut features = Vec::with_capacity(n * dim);
        let mut positive = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for im in &ds.images {
            let table = store.table(&im.image_id).ok_or_else(|| {
                SynthError::Features(format!("no features for image {}", im.image_id))
            })?;
            features.extend_from_slice(table);
            for l in assign_labels(grid, &im.annotations, sp, hit_iou) {
                positive.push(l.positive);
                weights.push(match mode {
                    LossMode::Fl => 1.0,
                    LossMode::Ssfl => l.salience_weight,
                });
            }
        }
        Self::from_parts(dim, features, positive, weights)
    }

    pub fn from_parts(
        dim: usize,
        features: Vec<f32>,
        positive: Vec<bool>,
        weights: Vec<f64>,
    ) -> Result<Self, SynthError> {
        let n = positive.len();
        if features.len() != n * dim || weights.len() != n {
            return Err(SynthError::Features("training set parts disagree in length".into()));
        }
        Ok(Self {
            dim,
            features,
            positive,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positives(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }

    /// Mean weighted focal loss and its gradient with respect to
    /// `(weights, bias)`, the bias component last.
    ///
    /// `p_t` is the logistic of the logit for positive anchors and of its
    /// negation for negative anchors, so `d p_t / d z = ±p_t (1 - p_t)`.
    pub fn loss_and_gradient(
        &self,
        model: &ModelWeights,
        fp: &FocalParams,
    ) -> Result<(f64, Vec<f64>), SynthError> {
        if self.is_empty() {
            return Err(SynthError::Config("empty training set".into()));
        }
        let dim = self.dim;
        let partials: Vec<Result<(f64, Vec<f64>), SynthError>> = self
            .features
            .par_chunks(CHUNK * dim)
            .enumerate()
            .map(|(c, feats)| {
                let start = c * CHUNK;
                let mut loss = 0.0;
                let mut grad = vec![0.0; dim + 1];
                for (k, row) in feats.chunks_exact(dim).enumerate() {
                    let i = start + k;
                    let z = model.logit(row);
                    let sign = if self.positive[i] { 1.0 } else { -1.0 };
                    let pt_raw = logistic(sign * z);
                    let pt = Probability::with_floor(pt_raw, fp.p_floor)?;
                    let w = self.weights[i];
                    loss += w * focal_loss(pt, fp)?;
                    let dz = w * focal_loss_grad(pt, fp)? * sign * pt_raw * (1.0 - pt_raw);
                    for (g, &f) in grad.iter_mut().zip(row) {
                        *g += dz * f as f64;
                    }
                    grad[dim] += dz;
                }
                Ok((loss, grad))
            })
            .collect();
        let n = self.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; dim + 1];
        for part in partials {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }
}

impl From<crate::losses::LossError> for SynthError {
    fn from(e: crate::losses::LossError) -> Self {
        SynthError::Loss(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ModelWeights,
    /// Mean loss at the start of every epoch.
    pub loss_trace: Vec<f64>,
    /// Global gradient norm after clipping, per epoch.
    pub clipped_grad_norms: Vec<f64>,
}

/// Zero-initialized full-batch gradient descent with global-norm clipping
/// and stepwise learning-rate decay.
pub fn train(set: &TrainingSet, tc: &TrainConfig) -> Result<TrainOutcome, SynthError> {
    tc.validate()?;
    if set.positives() == 0 {
        return Err(SynthError::NoPositives);
    }
    let mut model = ModelWeights::zeros(set.dim());
    let mut loss_trace = Vec::with_capacity(tc.epochs);
    let mut clipped_grad_norms = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let (loss, mut grad) = match set.loss_and_gradient(&model, &tc.focal) {
            Ok(v) => v,
            Err(SynthError::Loss(_)) => return Err(SynthError::DivergedLoss { epoch }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SynthError::DivergedLoss { epoch });
        }
        loss_trace.push(loss);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > tc.grad_clip_norm {
            let scale = tc.grad_clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= scale);
        }
        clipped_grad_norms.push(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        let lr = tc.learning_rate_at(epoch);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        model.bias -= lr * grad[set.dim()];
    }
    Ok(TrainOutcome {
        model,
        loss_trace,
        clipped_grad_norms,
    })
}

/// Scores every anchor of one scene and keeps the top detections.
pub fn predict(
    model: &ModelWeights,
    image_id: &str,
    table: &[f32],
    grid: &AnchorGrid,
    max_dets: usize,
) -> Vec<Detection> {
    let dim = model.weights.len();
    let dets: Vec<Detection> = grid
        .anchors()
        .iter()
        .zip(table.chunks_exact(dim))
        .map(|(a, row)| {
            Detection::from_box(image_id.to_string(), *a, model.score(row))
                .expect("logistic output lies in [0, 1]")
        })
        .collect();
    cap_detections(&dets, max_dets).expect("single image")
}

/// Detections for every image of a dataset, in dataset order.
pub fn predict_dataset(
    model: &ModelWeights,
    ds: &Dataset,
    store: &FeatureStore,
    grid: &AnchorGrid,
    max_dets: usize,
) -> Result<Vec<Detection>, SynthError> {
    if store.feature_dim() != model.weights.len() {
        return Err(SynthError::Features(format!(
            "model expects {} features, store has {}",
            model.weights.len(),
            store.feature_dim()
        )));
    }
    let per_image: Vec<Result<Vec<Detection>, SynthError>> = ds
        .images
        .par_iter()
        .map(|im| {
            let table = store.table(&im.image_id).ok_or_else(|| {
                SynthError::Features(format!("no features for image {}", im.image_id))
            })?;
            Ok(predict(model, &im.image_id, table, grid, max_dets))
        })
        .collect();
    let mut out = Vec::new();
    for r in per_image {
        out.extend(r?);
    }
    Ok(out)
}
