//! Synthetic lesion dataset generator.
//!
//! Each image is a smoothed-noise background inside an elliptical "tissue"
//! region, with additive bright ellipsoidal lesions whose union is the exact
//! ground-truth mask. Labeled images come from a narrow acquisition
//! distribution; unlabeled and test images are drawn with per-sample contrast
//! scaling, blur and background texture frequency shifted by `domain_shift`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::pool::{DatasetPool, HiddenTruth, Sample};
use crate::volume::{dims3, Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_labeled: i64,
    pub n_unlabeled: i64,
    pub n_test: i64,
    pub image_size: Vec<i64>,
    /// Inclusive range of lesions per image.
    pub lesion_count: [i64; 2],
    /// Range of ellipsoid semi-axes, in voxels.
    pub lesion_radius: [f64; 2],
    /// Lesion brightness above the local tissue, before contrast scaling.
    pub lesion_intensity: f64,
    /// 0 reproduces the labeled distribution; 1 is a strong shift.
    pub domain_shift: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_labeled: 5,
            n_unlabeled: 100,
            n_test: 20,
            image_size: vec![64, 64],
            lesion_count: [1, 4],
            lesion_radius: [2.0, 6.0],
            lesion_intensity: 1.0,
            domain_shift: 0.6,
            noise: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_labeled", self.n_labeled),
            ("n_unlabeled", self.n_unlabeled),
            ("n_test", self.n_test),
        ] {
            if v < 0 {
                return Err(Error::config(format!("synth.{field}"), format!("must be >= 0, got {v}")));
            }
        }
        if self.image_size.len() != 2 && self.image_size.len() != 3 {
            return Err(Error::config("synth.image_size", "must have 2 or 3 axes"));
        }
        if let Some(s) = self.image_size.iter().find(|&&s| s < 16) {
            return Err(Error::config("synth.image_size", format!("every axis must be >= 16, got {s}")));
        }
        let [lo, hi] = self.lesion_count;
        if lo < 1 || hi < lo {
            return Err(Error::config("synth.lesion_count", format!("need 1 <= min <= max, got [{lo}, {hi}]")));
        }
        let [rlo, rhi] = self.lesion_radius;
        let min_axis = *self.image_size.iter().min().expect("non-empty") as f64;
        if !(rlo >= 1.0 && rhi >= rlo && rhi <= min_axis / 6.0) {
            return Err(Error::config(
                "synth.lesion_radius",
                format!("need 1 <= min <= max <= smallest axis / 6, got [{rlo}, {rhi}]"),
            ));
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            return Err(Error::config("synth.domain_shift", "must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("synth.noise", "must be finite and >= 0"));
        }
        if !(self.lesion_intensity > 0.0 && self.lesion_intensity.is_finite()) {
            return Err(Error::config("synth.lesion_intensity", "must be finite and > 0"));
        }
        Ok(())
    }

    fn shape(&self) -> Vec<usize> {
        self.image_size.iter().map(|&s| s as usize).collect()
    }
}

/// Generated data: the pool, the test set, and the evaluation-only truth of the unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub pool: DatasetPool,
    pub test: Vec<Sample>,
    pub hidden: HiddenTruth,
}

#[derive(Debug, Clone, Copy)]
enum Split {
    Labeled = 0,
    Unlabeled = 1,
    Test = 2,
}

/// Per-image acquisition parameters.
#[derive(Debug, Clone, Copy)]
struct Acquisition {
    contrast: f64,
    blur_sigma: f64,
    texture_sigma: f64,
    noise: f64,
}

impl Acquisition {
    fn draw(cfg: &SynthConfig, shifted: bool, rng: &mut ChaCha8Rng) -> Self {
        if !shifted {
            return Self {
                contrast: 1.0,
                blur_sigma: rng.random_range(0.0..0.3),
                texture_sigma: 4.0,
                noise: cfg.noise,
            };
        }
        let s = cfg.domain_shift;
        Self {
            contrast: rng.random_range(1.0 - 0.65 * s..=1.0 + 0.1 * s),
            blur_sigma: rng.random_range(0.0..=0.3 + 1.7 * s),
            texture_sigma: rng.random_range(4.0 - 3.0 * s..=4.0),
            noise: cfg.noise * rng.random_range(1.0..=1.0 + 2.0 * s),
        }
    }
}

struct Lesion {
    center: [f64; 3],
    radii: [f64; 3],
}

fn render(cfg: &SynthConfig, shifted: bool, rng: &mut ChaCha8Rng) -> (Volume, Mask) {
    let shape = cfg.shape();
    let [d, h, w] = dims3(&shape);
    let is3d = shape.len() == 3;
    let acq = Acquisition::draw(cfg, shifted, rng);
    let n = d * h * w;

    let coords = |idx: usize| -> [f64; 3] {
        [(idx / (h * w)) as f64, ((idx / w) % h) as f64, (idx % w) as f64]
    };
    let extent = [d as f64, h as f64, w as f64];

    // Elliptical tissue region centred in the image.
    let tissue_radii = [extent[0] * 0.42, extent[1] * 0.42, extent[2] * 0.42];
    let centre = [(extent[0] - 1.0) / 2.0, (extent[1] - 1.0) / 2.0, (extent[2] - 1.0) / 2.0];
    let first_axis = if is3d { 0 } else { 1 };
    let inside = |p: [f64; 3], c: [f64; 3], r: [f64; 3]| -> f64 {
        (first_axis..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>()
    };

    let texture: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let texture = gaussian_blur(&texture, &shape, acq.texture_sigma);
    let tex_std = (texture.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);

    let count = rng.random_range(cfg.lesion_count[0]..=cfg.lesion_count[1]) as usize;
    let lesions: Vec<Lesion> = (0..count)
        .map(|_| {
            let mut radii = [1.0; 3];
            let mut center = [0.0; 3];
            for a in first_axis..3 {
                radii[a] = rng.random_range(cfg.lesion_radius[0]..=cfg.lesion_radius[1]);
                // Keep lesion centres well inside the tissue region.
                let span = tissue_radii[a] * 0.6;
                center[a] = (centre[a] + rng.random_range(-span..=span)).round();
            }
            Lesion { center, radii }
        })
        .collect();

    let mut image = vec![0.0; n];
    let mut mask = vec![0u8; n];
    for (idx, (px, m)) in image.iter_mut().zip(mask.iter_mut()).enumerate() {
        let p = coords(idx);
        let t = inside(p, centre, tissue_radii);
        // Smooth tissue boundary.
        let tissue = 1.0 / (1.0 + ((t.sqrt() - 1.0) * 12.0).exp());
        let mut v = 0.5 * tissue + 0.25 * texture[idx] / tex_std * tissue;
        for l in &lesions {
            if inside(p, l.center, l.radii) <= 1.0 {
                *m = 1;
                break;
            }
        }
        if *m == 1 {
            v += cfg.lesion_intensity * acq.contrast;
        }
        *px = v;
    }
    let mut image = gaussian_blur(&image, &shape, acq.blur_sigma);
    for v in image.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *v += acq.noise * e;
    }
    let volume = Volume::new(shape.clone(), image).expect("finite synthetic voxels").normalized();
    let mask = Mask::new(shape, mask).expect("binary synthetic mask");
    (volume, mask)
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 32) | index as u64);
    rng
}

pub fn sample_id(prefix: &str, index: usize) -> String {
    format!("{prefix}-{index:04}")
}

/// Generate a dataset; a pure function of `(config, seed)`.
///
/// Each sample has its own generator stream keyed by split and index, so a
/// sample does not depend on how many samples of the other splits are drawn.
pub fn synthesize_dataset(config: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut training = Vec::new();
    let mut unlabeled = Vec::new();
    let mut test = Vec::new();
    let mut hidden = HiddenTruth::default();
    for i in 0..config.n_labeled as usize {
        let (v, m) = render(config, false, &mut sample_rng(seed, Split::Labeled, i));
        training.push(Sample::labeled(sample_id("lab", i), v, m)?);
    }
    for i in 0..config.n_unlabeled as usize {
        let (v, m) = render(config, true, &mut sample_rng(seed, Split::Unlabeled, i));
        let id = sample_id("unl", i);
        hidden.insert(id.clone(), m);
        unlabeled.push(Sample::unlabeled(id, v));
    }
    for i in 0..config.n_test as usize {
        let (v, m) = render(config, true, &mut sample_rng(seed, Split::Test, i));
        test.push(Sample::labeled(sample_id("test", i), v, m)?);
    }
    Ok(SyntheticDataset {
        pool: DatasetPool::new(training, unlabeled)?,
        test,
        hidden,
    })
}
