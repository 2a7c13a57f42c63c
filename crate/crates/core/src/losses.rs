//! Segmentation and bottleneck consistency losses.
//!
//! For a pair of patches `(X_i, y_i)`, `(X_j, y_j)`:
//!
//! ```text
//! seg(p, y)      = 1 - (2 Σ p·y + 1) / (Σ p + Σ y + 1)
//! similarity     = exp(-mean((y_i - y_j)^2))
//! distance       = 2 |h_i - h_j|^2 / (|h_i|^2 + |h_j|^2 + 1e-8)
//! consistency    = distance(h(X_i), h(X_j)) · similarity(y_i, y_j)
//! total          = seg(F(X_i), y_i) + seg(F(X_j), y_j) + alpha · consistency
//! ```
//!
//! The labels are targets, so `similarity` is a constant weight: gradients flow
//! only through the predictions and the latent vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LatentFeatures, Model, Prediction};
use crate::volume::{Mask, Volume};

pub const DICE_SMOOTH: f64 = 1.0;
pub const DISTANCE_EPS: f64 = 1e-8;

fn check_same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a.to_vec(),
            actual: b.to_vec(),
        });
    }
    Ok(())
}

/// Soft Dice loss and its gradient with respect to each probability.
pub fn dice_loss_with_grad(probs: &[f64], y: &Mask) -> Result<(f64, Vec<f64>)> {
    if probs.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: probs.len(),
        });
    }
    let (mut inter, mut sum_p, mut sum_y) = (0.0, 0.0, 0.0);
    for (&p, &t) in probs.iter().zip(y.voxels()) {
        let t = f64::from(t);
        inter += p * t;
        sum_p += p;
        sum_y += t;
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = sum_p + sum_y + DICE_SMOOTH;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = y
        .voxels()
        .iter()
        .map(|&t| -(2.0 * f64::from(t) * den - num) / den2)
        .collect();
    Ok((loss, grad))
}

pub fn dice_loss(pred: &Prediction, y: &Mask) -> Result<f64> {
    check_same_shape(y.shape(), &pred.shape)?;
    Ok(dice_loss_with_grad(&pred.probs, y)?.0)
}

/// `exp(-mse(y_i, y_j))` with the mean taken over voxels.
pub fn similarity(y_i: &Mask, y_j: &Mask) -> Result<f64> {
    check_same_shape(y_i.shape(), y_j.shape())?;
    let differing = y_i.voxels().iter().zip(y_j.voxels()).filter(|(a, b)| a != b).count();
    Ok((-(differing as f64) / y_i.len() as f64).exp())
}

/// Normalized squared latent distance with gradients for both arguments.
pub fn feature_distance_with_grad(h_i: &[f64], h_j: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if h_i.len() != h_j.len() {
        return Err(Error::LengthMismatch {
            left: h_i.len(),
            right: h_j.len(),
        });
    }
    let diff2: f64 = h_i.iter().zip(h_j).map(|(a, b)| (a - b) * (a - b)).sum();
    let ni: f64 = h_i.iter().map(|a| a * a).sum();
    let nj: f64 = h_j.iter().map(|b| b * b).sum();
    let num = 2.0 * diff2;
    let den = ni + nj + DISTANCE_EPS;
    let d = num / den;
    let den2 = den * den;
    let grad_i = h_i
        .iter()
        .zip(h_j)
        .map(|(a, b)| (4.0 * (a - b) * den - num * 2.0 * a) / den2)
        .collect();
    let grad_j = h_i
        .iter()
        .zip(h_j)
        .map(|(a, b)| (4.0 * (b - a) * den - num * 2.0 * b) / den2)
        .collect();
    Ok((d, grad_i, grad_j))
}

pub fn feature_distance(h_i: &LatentFeatures, h_j: &LatentFeatures) -> Result<f64> {
    Ok(feature_distance_with_grad(h_i.values(), h_j.values())?.0)
}

pub fn consistency_loss(h_i: &LatentFeatures, h_j: &LatentFeatures, y_i: &Mask, y_j: &Mask) -> Result<f64> {
    Ok(feature_distance(h_i, h_j)? * similarity(y_i, y_j)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Two augmentations of one patch.
    AugSame,
    /// Same region of two different images.
    CrossImage,
}

/// Two labeled patches compared by the consistency term.
#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub patch_i: Volume,
    pub y_i: Mask,
    pub patch_j: Volume,
    pub y_j: Mask,
    pub kind: PairKind,
}

impl PairItem {
    pub fn new(patch_i: Volume, y_i: Mask, patch_j: Volume, y_j: Mask, kind: PairKind) -> Result<Self> {
        check_same_shape(patch_i.shape(), patch_j.shape())?;
        check_same_shape(patch_i.shape(), y_i.shape())?;
        check_same_shape(patch_j.shape(), y_j.shape())?;
        Ok(Self {
            patch_i,
            y_i,
            patch_j,
            y_j,
            kind,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            patch_i: self.patch_j.clone(),
            y_i: self.y_j.clone(),
            patch_j: self.patch_i.clone(),
            y_j: self.y_i.clone(),
            kind: self.kind,
        }
    }
}

/// A non-empty list of pairs sharing one patch size.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    items: Vec<PairItem>,
}

impl PairBatch {
    pub fn new(items: Vec<PairItem>) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("pair batch"))?;
        let shape = first.patch_i.shape().to_vec();
        for it in &items[1..] {
            check_same_shape(&shape, it.patch_i.shape())?;
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[PairItem] {
        &self.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub seg_i: f64,
    pub seg_j: f64,
    pub reg: f64,
    pub total: f64,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// Total pair loss.
pub fn total_loss(model: &Model, pair: &PairItem, alpha: f64) -> Result<LossReport> {
    check_alpha(alpha)?;
    let (pi, hi) = model.forward(&pair.patch_i)?;
    let (pj, hj) = model.forward(&pair.patch_j)?;
    let seg_i = dice_loss(&pi, &pair.y_i)?;
    let seg_j = dice_loss(&pj, &pair.y_j)?;
    let reg = consistency_loss(&hi, &hj, &pair.y_i, &pair.y_j)?;
    Ok(LossReport {
        seg_i,
        seg_j,
        reg,
        total: seg_i + seg_j + alpha * reg,
        alpha,
    })
}

/// Total pair loss and its gradient with respect to the model parameters.
pub fn total_loss_with_grad(model: &Model, pair: &PairItem, alpha: f64) -> Result<(LossReport, Vec<f64>)> {
    check_alpha(alpha)?;
    let (pi, hi, ti) = model.forward_trace(&pair.patch_i)?;
    let (pj, hj, tj) = model.forward_trace(&pair.patch_j)?;
    let (seg_i, dpi) = dice_loss_with_grad(&pi.probs, &pair.y_i)?;
    let (seg_j, dpj) = dice_loss_with_grad(&pj.probs, &pair.y_j)?;
    let sim = similarity(&pair.y_i, &pair.y_j)?;
    let (dist, dhi, dhj) = feature_distance_with_grad(hi.values(), hj.values())?;
    let reg = dist * sim;
    let scale = alpha * sim;
    let (dhi, dhj) = if alpha == 0.0 {
        (None, None)
    } else {
        (
            Some(dhi.iter().map(|g| g * scale).collect::<Vec<_>>()),
            Some(dhj.iter().map(|g| g * scale).collect::<Vec<_>>()),
        )
    };
    let gi = model.backward(&ti, Some(&dpi), dhi.as_deref());
    let gj = model.backward(&tj, Some(&dpj), dhj.as_deref());
    let grads = gi.params.iter().zip(&gj.params).map(|(a, b)| a + b).collect();
    Ok((
        LossReport {
            seg_i,
            seg_j,
            reg,
            total: seg_i + seg_j + alpha * reg,
            alpha,
        },
        grads,
    ))
}

/// Dice loss of a single labeled patch and its parameter gradient.
pub fn segmentation_loss_with_grad(model: &Model, patch: &Volume, y: &Mask) -> Result<(f64, Vec<f64>)> {
    let (p, _, trace) = model.forward_trace(patch)?;
    check_same_shape(y.shape(), &p.shape)?;
    let (loss, dp) = dice_loss_with_grad(&p.probs, y)?;
    Ok((loss, model.backward(&trace, Some(&dp), None).params))
}
