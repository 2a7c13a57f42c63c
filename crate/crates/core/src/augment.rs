//! Intensity-only image-quality augmentation.
//!
//! Every operation changes voxel values but never moves content, so the mask
//! paired with an augmented patch stays valid unchanged.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Blur,
    Sharpen,
    Scale,
    Noise,
}

/// Parameter ranges `[low, high]` for each operation; disabled ops are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub blur_sigma_range: [f64; 2],
    pub sharpen_strength_range: [f64; 2],
    pub intensity_scale_range: [f64; 2],
    pub noise_std_range: [f64; 2],
    pub enabled_ops: Vec<AugmentOp>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.0, 1.5],
            sharpen_strength_range: [0.0, 1.0],
            intensity_scale_range: [0.7, 1.3],
            noise_std_range: [0.0, 0.1],
            enabled_ops: vec![AugmentOp::Blur, AugmentOp::Sharpen, AugmentOp::Scale, AugmentOp::Noise],
        }
    }
}

impl AugmentConfig {
    /// The identity augmentation.
    pub fn disabled() -> Self {
        Self {
            enabled_ops: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("augment.blur_sigma_range", self.blur_sigma_range),
            ("augment.sharpen_strength_range", self.sharpen_strength_range),
            ("augment.intensity_scale_range", self.intensity_scale_range),
            ("augment.noise_std_range", self.noise_std_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(name, format!("need finite low <= high, got [{lo}, {hi}]")));
            }
            if name != "augment.intensity_scale_range" && lo < 0.0 {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        Ok(())
    }

    fn enabled(&self, op: AugmentOp) -> bool {
        self.enabled_ops.contains(&op)
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Apply the enabled operations in the fixed order blur, sharpen, scale, noise.
pub fn augment<R: Rng + ?Sized>(patch: &Volume, config: &AugmentConfig, rng: &mut R) -> Result<Volume> {
    config.validate()?;
    let shape = patch.shape();
    let mut x = patch.voxels().to_vec();
    if config.enabled(AugmentOp::Blur) {
        let sigma = draw(rng, config.blur_sigma_range);
        x = gaussian_blur(&x, shape, sigma);
    }
    if config.enabled(AugmentOp::Sharpen) {
        // Unsharp masking against a unit-sigma blur.
        let strength = draw(rng, config.sharpen_strength_range);
        if strength > 0.0 {
            let smooth = gaussian_blur(&x, shape, 1.0);
            x.iter_mut().zip(&smooth).for_each(|(v, s)| *v += strength * (*v - s));
        }
    }
    if config.enabled(AugmentOp::Scale) {
        let c = draw(rng, config.intensity_scale_range);
        x.iter_mut().for_each(|v| *v *= c);
    }
    if config.enabled(AugmentOp::Noise) {
        let std = draw(rng, config.noise_std_range);
        if std > 0.0 {
            for v in x.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += std * e;
            }
        }
    }
    Ok(patch.map_voxels(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{gaussian_kernel, reflect_index};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn patch() -> Volume {
        Volume::new(vec![9, 11], (0..99).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&patch(), &AugmentConfig::disabled(), &mut rng).unwrap(), patch());
    }

    #[test]
    fn zero_noise_is_identity() {
        let cfg = AugmentConfig {
            noise_std_range: [0.0, 0.0],
            enabled_ops: vec![AugmentOp::Noise],
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&patch(), &cfg, &mut rng).unwrap(), patch());
    }

    #[test]
    fn blur_of_impulse_is_the_kernel() {
        let n = 15;
        let mut v = vec![0.0; n * n];
        v[7 * n + 7] = 1.0;
        let img = Volume::new(vec![n, n], v.clone()).unwrap();
        let cfg = AugmentConfig {
            blur_sigma_range: [1.0, 1.0],
            enabled_ops: vec![AugmentOp::Blur],
            ..AugmentConfig::default()
        };
        let out = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        // Oracle: direct 2D convolution with the outer product of the truncated kernel.
        let k = gaussian_kernel(1.0);
        let r = (k.len() / 2) as isize;
        for y in 0..n as isize {
            for x in 0..n as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = reflect_index(y + dy, n);
                        let sx = reflect_index(x + dx, n);
                        acc += k[(dy + r) as usize] * k[(dx + r) as usize] * v[sy * n + sx];
                    }
                }
                assert!((out.voxels()[y as usize * n + x as usize] - acc).abs() < 1e-15);
            }
        }
        assert!((out.voxels()[7 * n + 7] - k[3] * k[3]).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let cfg = AugmentConfig::default();
        let a = augment(&patch(), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = augment(&patch(), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), patch().shape());
    }

    #[test]
    fn invalid_ranges() {
        let cfg = AugmentConfig {
            blur_sigma_range: [2.0, 1.0],
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
