//! Sampling of training pairs for the consistency term.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::losses::{PairItem, PairKind};
use crate::pool::{DatasetPool, Sample};
use crate::volume::{extract_mask_patch, extract_patch, tile_origins, Mask, PatchSpec, Volume};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchPositioning {
    /// Uniform origin anywhere the patch fits.
    #[default]
    Random,
    /// One of the half-overlapping grid positions used for inference.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairPolicy {
    pub aug_same_fraction: f64,
    pub patch_positioning: PatchPositioning,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            aug_same_fraction: 0.5,
            patch_positioning: PatchPositioning::Random,
        }
    }
}

impl PairPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.aug_same_fraction) {
            return Err(Error::config("pairing.aug_same_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Draw a patch box of `patch_size` inside `shape`.
pub fn draw_patch_spec<R: Rng + ?Sized>(
    shape: &[usize],
    patch_size: &[usize],
    positioning: PatchPositioning,
    rng: &mut R,
) -> Result<PatchSpec> {
    if shape.len() != patch_size.len() || shape.iter().zip(patch_size).any(|(s, p)| s < p) {
        return Err(Error::ShapeMismatch {
            expected: patch_size.to_vec(),
            actual: shape.to_vec(),
        });
    }
    let origin = match positioning {
        PatchPositioning::Random => shape
            .iter()
            .zip(patch_size)
            .map(|(s, p)| rng.random_range(0..=s - p))
            .collect(),
        PatchPositioning::Grid => {
            let stride: Vec<usize> = patch_size.iter().map(|p| (p / 2).max(1)).collect();
            let mut origins = tile_origins(shape, patch_size, &stride);
            let pick = rng.random_range(0..origins.len());
            origins.swap_remove(pick)
        }
    };
    Ok(PatchSpec::new(origin, patch_size.to_vec()))
}

fn crop(sample: &Sample, spec: &PatchSpec) -> Result<(Volume, Mask)> {
    let mask = sample
        .mask()
        .ok_or_else(|| Error::config("training", format!("sample `{}` has no mask", sample.id())))?;
    Ok((extract_patch(sample.volume(), spec)?, extract_mask_patch(mask, spec)?))
}

/// One training pair drawn from the training side of the pool.
pub fn sample_pair<R: Rng + ?Sized>(
    pool: &DatasetPool,
    policy: &PairPolicy,
    aug: &AugmentConfig,
    patch_size: &[usize],
    rng: &mut R,
) -> Result<PairItem> {
    let training = pool.training();
    if training.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    let same = rng.random::<f64>() < policy.aug_same_fraction || training.len() < 2;
    if same {
        let s = &training[rng.random_range(0..training.len())];
        let spec = draw_patch_spec(s.volume().shape(), patch_size, policy.patch_positioning, rng)?;
        let (patch, y) = crop(s, &spec)?;
        let a = augment(&patch, aug, rng)?;
        let b = augment(&patch, aug, rng)?;
        PairItem::new(a, y.clone(), b, y, PairKind::AugSame)
    } else {
        let picked = index::sample(rng, training.len(), 2);
        let (si, sj) = (&training[picked.index(0)], &training[picked.index(1)]);
        // Same box in both images; restrict to the common extent.
        let common: Vec<usize> = si
            .volume()
            .shape()
            .iter()
            .zip(sj.volume().shape())
            .map(|(a, b)| *a.min(b))
            .collect();
        let spec = draw_patch_spec(&common, patch_size, policy.patch_positioning, rng)?;
        let (pi, yi) = crop(si, &spec)?;
        let (pj, yj) = crop(sj, &spec)?;
        let a = augment(&pi, aug, rng)?;
        let b = augment(&pj, aug, rng)?;
        PairItem::new(a, yi, b, yj, PairKind::CrossImage)
    }
}

/// One augmented labeled patch, for single-sample (non-pair) training.
pub fn sample_single<R: Rng + ?Sized>(
    pool: &DatasetPool,
    policy: &PairPolicy,
    aug: &AugmentConfig,
    patch_size: &[usize],
    rng: &mut R,
) -> Result<(Volume, Mask)> {
    let training = pool.training();
    if training.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    let s = &training[rng.random_range(0..training.len())];
    let spec = draw_patch_spec(s.volume().shape(), patch_size, policy.patch_positioning, rng)?;
    let (patch, y) = crop(s, &spec)?;
    Ok((augment(&patch, aug, rng)?, y))
}
