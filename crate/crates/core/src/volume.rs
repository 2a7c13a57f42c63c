//! Dense image volumes, binary masks and axis-aligned patches.
//!
//! Volumes are 2D or 3D, stored row-major with the last axis fastest. Internally
//! every shape is lifted to three axes `[depth, height, width]` with `depth = 1`
//! for 2D data, so the same code paths serve both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lift a rank-2 or rank-3 shape to `[d, h, w]`.
pub fn dims3(shape: &[usize]) -> [usize; 3] {
    match shape {
        [h, w] => [1, *h, *w],
        [d, h, w] => [*d, *h, *w],
        _ => panic!("volumes are rank 2 or 3, got rank {}", shape.len()),
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() != 2 && shape.len() != 3 {
        return Err(Error::config("shape", format!("rank must be 2 or 3, got {}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::config("shape", format!("all dimensions must be >= 1, got {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::config("shape", "voxel count overflows"))
}

/// Single-channel image volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    shape: Vec<usize>,
    spacing: Vec<f64>,
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(shape: Vec<usize>, voxels: Vec<f64>) -> Result<Self> {
        let spacing = vec![1.0; shape.len()];
        Self::with_spacing(shape, spacing, voxels)
    }

    pub fn with_spacing(shape: Vec<usize>, spacing: Vec<f64>, voxels: Vec<f64>) -> Result<Self> {
        let count = check_shape(&shape)?;
        if voxels.len() != count {
            return Err(Error::LengthMismatch {
                left: count,
                right: voxels.len(),
            });
        }
        if spacing.len() != shape.len() || spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::config("spacing", format!("invalid spacing {spacing:?}")));
        }
        if let Some(index) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            shape,
            spacing,
            voxels,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let count = check_shape(&shape)?;
        Self::new(shape, vec![0.0; count])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    /// Rescale to zero mean and unit variance. Constant volumes become all zeros.
    pub fn normalized(&self) -> Volume {
        let n = self.voxels.len() as f64;
        let mean = self.voxels.iter().sum::<f64>() / n;
        let var = self.voxels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let voxels = if std > 1e-12 {
            self.voxels.iter().map(|v| (v - mean) / std).collect()
        } else {
            vec![0.0; self.voxels.len()]
        };
        Volume {
            shape: self.shape.clone(),
            spacing: self.spacing.clone(),
            voxels,
        }
    }

    /// Replace the voxel buffer, keeping shape and spacing. Used by intensity-only transforms.
    pub(crate) fn map_voxels(&self, voxels: Vec<f64>) -> Volume {
        debug_assert_eq!(voxels.len(), self.voxels.len());
        Volume {
            shape: self.shape.clone(),
            spacing: self.spacing.clone(),
            voxels,
        }
    }
}

/// Binary segmentation mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    shape: Vec<usize>,
    voxels: Vec<u8>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, voxels: Vec<u8>) -> Result<Self> {
        let count = check_shape(&shape)?;
        if voxels.len() != count {
            return Err(Error::LengthMismatch {
                left: count,
                right: voxels.len(),
            });
        }
        if let Some(v) = voxels.iter().find(|&&v| v > 1) {
            return Err(Error::config("mask", format!("mask values must be 0 or 1, found {v}")));
        }
        Ok(Self { shape, voxels })
    }

    /// Build a mask from real values that must each be exactly 0 or 1.
    pub fn from_reals(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut voxels = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 {
                voxels.push(0);
            } else if v == 1.0 {
                voxels.push(1);
            } else {
                return Err(Error::config("mask", format!("mask values must be 0 or 1, found {v}")));
            }
        }
        Self::new(shape, voxels)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let count = check_shape(&shape)?;
        Self::new(shape, vec![0; count])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.voxels.len() as f64
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.voxels.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Axis order of a patch relative to its source volume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Same axis order as the source volume (row-major, last axis fastest).
    #[default]
    Canonical,
}

/// Axis-aligned box `[origin, origin + size)` inside a volume.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: Vec<usize>,
    pub size: Vec<usize>,
    #[serde(default)]
    pub orientation: Orientation,
}

impl PatchSpec {
    pub fn new(origin: Vec<usize>, size: Vec<usize>) -> Self {
        Self {
            origin,
            size,
            orientation: Orientation::Canonical,
        }
    }

    pub fn check_within(&self, shape: &[usize]) -> Result<()> {
        let oob = || Error::OutOfBounds {
            origin: self.origin.clone(),
            size: self.size.clone(),
            shape: shape.to_vec(),
        };
        if self.origin.len() != shape.len() || self.size.len() != shape.len() {
            return Err(oob());
        }
        for ((&o, &s), &n) in self.origin.iter().zip(&self.size).zip(shape) {
            if s == 0 || o.checked_add(s).is_none_or(|end| end > n) {
                return Err(oob());
            }
        }
        Ok(())
    }

    /// Shift the origin by `offset` (used to express a patch of a patch in source coordinates).
    pub fn translated(&self, offset: &[usize]) -> PatchSpec {
        PatchSpec {
            origin: self.origin.iter().zip(offset).map(|(a, b)| a + b).collect(),
            size: self.size.clone(),
            orientation: self.orientation,
        }
    }
}

fn crop<T: Copy>(data: &[T], shape: &[usize], spec: &PatchSpec) -> Result<Vec<T>> {
    spec.check_within(shape)?;
    let [_, sh, sw] = dims3(shape);
    let [od, oh, ow] = dims3_origin(&spec.origin);
    let [pd, ph, pw] = dims3(&spec.size);
    let mut out = Vec::with_capacity(pd * ph * pw);
    for z in 0..pd {
        for y in 0..ph {
            let row = ((od + z) * sh + oh + y) * sw + ow;
            out.extend_from_slice(&data[row..row + pw]);
        }
    }
    Ok(out)
}

fn dims3_origin(origin: &[usize]) -> [usize; 3] {
    match origin {
        [y, x] => [0, *y, *x],
        [z, y, x] => [*z, *y, *x],
        _ => panic!("origin rank must be 2 or 3"),
    }
}

/// Copy the box described by `spec` out of `volume`.
pub fn extract_patch(volume: &Volume, spec: &PatchSpec) -> Result<Volume> {
    let voxels = crop(&volume.voxels, &volume.shape, spec)?;
    Volume::with_spacing(spec.size.clone(), volume.spacing.clone(), voxels)
}

/// Mask counterpart of [`extract_patch`].
pub fn extract_mask_patch(mask: &Mask, spec: &PatchSpec) -> Result<Mask> {
    let voxels = crop(&mask.voxels, &mask.shape, spec)?;
    Ok(Mask {
        shape: spec.size.clone(),
        voxels,
    })
}

/// Start offsets along one axis for tiling `extent` with windows of `window`
/// at the given `stride`. The last window is shifted inward so it ends exactly
/// at `extent`. Requires `window <= extent`.
pub fn tile_starts(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    debug_assert!(window <= extent && stride >= 1);
    let mut starts = Vec::new();
    let mut s = 0;
    while s + window < extent {
        starts.push(s);
        s += stride;
    }
    starts.push(extent - window);
    starts.dedup();
    starts
}

/// All patch origins of a tiling of `shape` by `patch` with per-axis `stride`.
pub fn tile_origins(shape: &[usize], patch: &[usize], stride: &[usize]) -> Vec<Vec<usize>> {
    let axes: Vec<Vec<usize>> = shape
        .iter()
        .zip(patch)
        .zip(stride)
        .map(|((&n, &p), &s)| tile_starts(n, p, s))
        .collect();
    let mut origins = vec![Vec::new()];
    for axis in &axes {
        origins = origins
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&s| {
                    let mut o = prefix.clone();
                    o.push(s);
                    o
                })
            })
            .collect();
    }
    origins
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Volume {
        Volume::new(vec![h, w], (0..h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn full_patch_is_identity() {
        let v = ramp(4, 4);
        let p = extract_patch(&v, &PatchSpec::new(vec![0, 0], vec![4, 4])).unwrap();
        assert_eq!(p, v);
    }

    #[test]
    fn ramp_patch_values() {
        let v = ramp(4, 4);
        let p = extract_patch(&v, &PatchSpec::new(vec![1, 1], vec![2, 2])).unwrap();
        assert_eq!(p.voxels(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn out_of_bounds_patch() {
        let v = ramp(4, 4);
        let err = extract_patch(&v, &PatchSpec::new(vec![3, 3], vec![2, 2])).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn rejects_bad_volumes() {
        assert!(Volume::new(vec![2, 0], vec![]).is_err());
        assert!(Volume::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Volume::new(vec![1, 2], vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(Mask::new(vec![1, 2], vec![0, 2]).is_err());
    }

    #[test]
    fn three_d_patch() {
        let v = Volume::new(vec![3, 3, 3], (0..27).map(f64::from).collect()).unwrap();
        let p = extract_patch(&v, &PatchSpec::new(vec![1, 1, 1], vec![2, 1, 2])).unwrap();
        // (z,y,x) -> 9z + 3y + x
        assert_eq!(p.voxels(), &[13.0, 14.0, 22.0, 23.0]);
    }

    #[test]
    fn tiling_shifts_last_tile_inward() {
        assert_eq!(tile_starts(10, 4, 4), vec![0, 4, 6]);
        assert_eq!(tile_starts(8, 4, 4), vec![0, 4]);
        assert_eq!(tile_starts(4, 4, 2), vec![0]);
        assert_eq!(tile_starts(8, 4, 2), vec![0, 2, 4]);
        assert_eq!(tile_origins(&[8, 6], &[4, 6], &[4, 6]).len(), 2);
    }

    #[test]
    fn normalization_zero_mean_unit_variance() {
        let v = ramp(4, 4).normalized();
        let mean: f64 = v.voxels().iter().sum::<f64>() / 16.0;
        let var: f64 = v.voxels().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let c = Volume::new(vec![2, 2], vec![3.0; 4]).unwrap().normalized();
        assert_eq!(c.voxels(), &[0.0; 4]);
    }

    /// A shape and a box inside it.
    fn shape_and_box() -> impl Strategy<Value = (Vec<usize>, PatchSpec)> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            (0..h, 0..w).prop_flat_map(move |(oy, ox)| {
                (1..=h - oy, 1..=w - ox)
                    .prop_map(move |(sy, sx)| (vec![h, w], PatchSpec::new(vec![oy, ox], vec![sy, sx])))
            })
        })
    }

    proptest! {
        #[test]
        fn patch_composition((shape, outer) in shape_and_box(), fy in 0.0f64..1.0, fx in 0.0f64..1.0, gy in 0.0f64..1.0, gx in 0.0f64..1.0) {
            let v = ramp(shape[0], shape[1]);
            let (sh, sw) = (outer.size[0], outer.size[1]);
            let oy = (fy * sh as f64) as usize % sh;
            let ox = (fx * sw as f64) as usize % sw;
            let iy = 1 + (gy * (sh - oy) as f64) as usize % (sh - oy);
            let ix = 1 + (gx * (sw - ox) as f64) as usize % (sw - ox);
            let inner = PatchSpec::new(vec![oy, ox], vec![iy, ix]);
            let twice = extract_patch(&extract_patch(&v, &outer).unwrap(), &inner).unwrap();
            let direct = extract_patch(&v, &inner.translated(&outer.origin)).unwrap();
            prop_assert_eq!(twice, direct);
        }
    }
}
