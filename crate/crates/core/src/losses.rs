//! Focal loss, salience-sensitive focal loss, and their derivatives.
//!
//! For a candidate with predicted ground-truth-class probability `p_t`:
//!
//! ```text
//! FL(p_t)      = -alpha_fl * (1 - p_t)^gamma * ln(p_t)
//! SSFL(d, p_t) = w_ss(d) * FL(p_t)
//! ```
//!
//! where `w_ss(d)` is `alpha_ss` when the annotation whose center is nearest
//! to the center of candidate box `d` is salient, and 1 otherwise (including
//! when the image has no annotations at all).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SignAnnotation;
use crate::geometry::BBox;

/// Lower clamp applied to `p_t` before taking its logarithm.
pub const DEFAULT_P_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite value in loss evaluation: {0}")]
    Domain(String),
    #[error("batch has no candidates")]
    EmptyBatch,
    #[error("invalid loss parameters: {0}")]
    InvalidParams(String),
    #[error("batch length mismatch: {probs} probabilities, {weights} weights")]
    LengthMismatch { probs: usize, weights: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub alpha_fl: f64,
    pub gamma: f64,
    /// Clamp floor for `p_t`.
    #[serde(default = "default_p_floor")]
    pub p_floor: f64,
}

fn default_p_floor() -> f64 {
    DEFAULT_P_FLOOR
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha_fl: 0.25,
            gamma: 2.0,
            p_floor: DEFAULT_P_FLOOR,
        }
    }
}

impl FocalParams {
    pub fn new(alpha_fl: f64, gamma: f64) -> Result<Self, LossError> {
        let fp = Self {
            alpha_fl,
            gamma,
            p_floor: DEFAULT_P_FLOOR,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha_fl.is_finite() && self.alpha_fl > 0.0) {
            return Err(LossError::InvalidParams(format!(
                "alpha_fl must be positive and finite, got {}",
                self.alpha_fl
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LossError::InvalidParams(format!(
                "gamma must be non-negative and finite, got {}",
                self.gamma
            )));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 1.0) {
            return Err(LossError::InvalidParams(format!(
                "p_floor must lie in (0, 1), got {}",
                self.p_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalienceParams {
    pub alpha_ss: f64,
}

impl Default for SalienceParams {
    fn default() -> Self {
        Self { alpha_ss: 4.0 }
    }
}

impl SalienceParams {
    /// Weight for candidates in images without any annotation.
    pub const BACKGROUND_WEIGHT: f64 = 1.0;

    pub fn new(alpha_ss: f64) -> Result<Self, LossError> {
        let sp = Self { alpha_ss };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha_ss.is_finite() && self.alpha_ss >= 1.0) {
            return Err(LossError::InvalidParams(format!(
                "alpha_ss must be finite and >= 1, got {}",
                self.alpha_ss
            )));
        }
        Ok(())
    }
}

/// Predicted probability of the ground-truth class, clamped into `[floor, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(p: f64) -> Result<Self, LossError> {
        Self::with_floor(p, DEFAULT_P_FLOOR)
    }

    pub fn with_floor(p: f64, floor: f64) -> Result<Self, LossError> {
        if !p.is_finite() {
            return Err(LossError::Domain(format!("probability {p}")));
        }
        Ok(Self(p.clamp(floor, 1.0)))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Fl,
    Ssfl,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Fl => "fl",
            LossMode::Ssfl => "ssfl",
        })
    }
}

fn finite(v: f64, what: &str) -> Result<f64, LossError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LossError::Domain(format!("{what} evaluated to {v}")))
    }
}

/// `base^exponent`, through `powi` for small integral exponents.
fn pow_gamma(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && (0.0..=32.0).contains(&exponent) {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

pub fn focal_loss(p: Probability, fp: &FocalParams) -> Result<f64, LossError> {
    let p = p.value();
    let loss = -fp.alpha_fl * pow_gamma(1.0 - p, fp.gamma) * p.ln();
    // `+ 0.0` turns the -0.0 produced at p = 1 into +0.0.
    finite(loss + 0.0, "focal loss")
}

/// Derivative of [`focal_loss`] with respect to `p_t`.
pub fn focal_loss_grad(p: Probability, fp: &FocalParams) -> Result<f64, LossError> {
    let p = p.value();
    let one_minus = 1.0 - p;
    // The focusing term vanishes identically for gamma = 0, and tends to 0
    // as p -> 1 for any gamma > 0.
    let focusing = if fp.gamma == 0.0 || one_minus == 0.0 {
        0.0
    } else {
        fp.alpha_fl * fp.gamma * pow_gamma(one_minus, fp.gamma - 1.0) * p.ln()
    };
    let ce = fp.alpha_fl * pow_gamma(one_minus, fp.gamma) / p;
    finite(focusing - ce, "focal loss gradient")
}

/// Index of the annotation whose center is nearest to the center of `d`;
/// equal distances go to the lexicographically smallest annotation id.
pub fn nearest_annotation(d: &BBox, gts: &[SignAnnotation]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, gt) in gts.iter().enumerate() {
        let dist = d.center_distance(&gt.bbox);
        best = match best {
            None => Some((i, dist)),
            Some((j, bd)) => {
                if dist < bd || (dist == bd && gt.id < gts[j].id) {
                    Some((i, dist))
                } else {
                    Some((j, bd))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

pub fn salience_weight(d: &BBox, gts: &[SignAnnotation], sp: &SalienceParams) -> f64 {
    match nearest_annotation(d, gts) {
        None => SalienceParams::BACKGROUND_WEIGHT,
        Some(i) if gts[i].salient => sp.alpha_ss,
        Some(_) => 1.0,
    }
}

/// Salience-sensitive focal loss for one candidate.
pub fn ssfl(
    p: Probability,
    d: &BBox,
    gts: &[SignAnnotation],
    fp: &FocalParams,
    sp: &SalienceParams,
) -> Result<f64, LossError> {
    Ok(salience_weight(d, gts, sp) * focal_loss(p, fp)?)
}

/// Mean weighted focal loss and per-candidate gradients with respect to each
/// `p_t`. Gradients already include the `1 / n` factor of the mean.
///
/// Summation runs in input order.
pub fn weighted_batch_loss(
    probs: &[Probability],
    weights: &[f64],
    fp: &FocalParams,
) -> Result<(f64, Vec<f64>), LossError> {
    if probs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if probs.len() != weights.len() {
        return Err(LossError::LengthMismatch {
            probs: probs.len(),
            weights: weights.len(),
        });
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (&p, &w) in probs.iter().zip(weights) {
        total += w * focal_loss(p, fp)?;
        grads.push(w * focal_loss_grad(p, fp)? / n);
    }
    Ok((finite(total / n, "batch loss")?, grads))
}

/// Mean loss over detection-head candidates in one image, in FL or SSFL mode.
pub fn batch_loss(
    candidates: &[(Probability, BBox)],
    gts: &[SignAnnotation],
    fp: &FocalParams,
    sp: &SalienceParams,
    mode: LossMode,
) -> Result<(f64, Vec<f64>), LossError> {
    let probs: Vec<Probability> = candidates.iter().map(|(p, _)| *p).collect();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|(_, d)| match mode {
            LossMode::Fl => 1.0,
            LossMode::Ssfl => salience_weight(d, gts, sp),
        })
        .collect();
    weighted_batch_loss(&probs, &weights, fp)
}
