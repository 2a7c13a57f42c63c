//! Whole-volume inference: tiled prediction, thresholding and sample embedding.

use rayon::prelude::*;

use super::model::{LatentFeatures, Model};
use crate::error::{Error, Result};
use crate::volume::{dims3, extract_patch, tile_origins, Mask, PatchSpec, Volume};

fn check_fits(model: &Model, volume: &Volume) -> Result<()> {
    let patch = &model.config().patch_size;
    if volume.shape().len() != patch.len() || volume.shape().iter().zip(patch).any(|(v, p)| v < p) {
        return Err(Error::ShapeMismatch {
            expected: patch.clone(),
            actual: volume.shape().to_vec(),
        });
    }
    Ok(())
}

/// Foreground probabilities over the whole volume. Patches are tiled with 50%
/// overlap (last tile shifted inward) and overlapping probabilities averaged.
pub fn predict_probs(model: &Model, volume: &Volume) -> Result<Vec<f64>> {
    check_fits(model, volume)?;
    let patch = model.config().patch_size.clone();
    let stride: Vec<usize> = patch.iter().map(|p| (p / 2).max(1)).collect();
    let origins = tile_origins(volume.shape(), &patch, &stride);
    let tiles: Vec<(PatchSpec, Vec<f64>)> = origins
        .into_par_iter()
        .map(|origin| {
            let spec = PatchSpec::new(origin, patch.clone());
            let x = extract_patch(volume, &spec)?;
            let (pred, _) = model.forward(&x)?;
            Ok((spec, pred.probs))
        })
        .collect::<Result<_>>()?;
    let [_, h, w] = dims3(volume.shape());
    let [pd, ph, pw] = dims3(&patch);
    let mut sum = vec![0.0; volume.len()];
    let mut count = vec![0u32; volume.len()];
    for (spec, probs) in &tiles {
        let o = &spec.origin;
        let (oz, oy, ox) = if o.len() == 3 { (o[0], o[1], o[2]) } else { (0, o[0], o[1]) };
        for z in 0..pd {
            for y in 0..ph {
                let dst = ((oz + z) * h + oy + y) * w + ox;
                let src = (z * ph + y) * pw;
                for x in 0..pw {
                    sum[dst + x] += probs[src + x];
                    count[dst + x] += 1;
                }
            }
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / f64::from(c)).collect())
}

/// Voxelwise `prob > threshold` (strict).
pub fn threshold_probs(shape: &[usize], probs: &[f64], threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", format!("must lie in (0, 1), got {threshold}")));
    }
    Mask::new(shape.to_vec(), probs.iter().map(|&p| u8::from(p > threshold)).collect())
}

/// Binary segmentation of a whole volume.
pub fn predict_mask(model: &Model, volume: &Volume, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", format!("must lie in (0, 1), got {threshold}")));
    }
    let probs = predict_probs(model, volume)?;
    threshold_probs(volume.shape(), &probs, threshold)
}

/// Mean latent vector over a non-overlapping tiling of the volume.
pub fn embed_sample(model: &Model, volume: &Volume) -> Result<LatentFeatures> {
    check_fits(model, volume)?;
    let patch = model.config().patch_size.clone();
    let origins = tile_origins(volume.shape(), &patch, &patch);
    let latents: Vec<Vec<f64>> = origins
        .into_par_iter()
        .map(|origin| {
            let x = extract_patch(volume, &PatchSpec::new(origin, patch.clone()))?;
            Ok(model.forward(&x)?.1 .0)
        })
        .collect::<Result<_>>()?;
    let n = latents.len() as f64;
    let mut mean = vec![0.0; model.config().latent_len()];
    for l in &latents {
        for (m, v) in mean.iter_mut().zip(l) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(LatentFeatures(mean))
}
