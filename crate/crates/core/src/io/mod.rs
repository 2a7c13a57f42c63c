//! Volume and mask file formats.

pub mod nifti;
pub mod raw_tensor;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};
pub use raw_tensor::{DType, RawTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Nifti1,
    RawTensor,
}

impl Format {
    /// Guess the format from a file extension (`.nii` or `.rawt`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "nii" => Some(Format::Nifti1),
            "rawt" => Some(Format::RawTensor),
            _ => None,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decode a volume from an in-memory file image.
pub fn decode_volume(bytes: &[u8], format: Format) -> Result<Volume> {
    match format {
        Format::Nifti1 => nifti::decode(bytes),
        Format::RawTensor => {
            let t = RawTensor::decode(bytes)?;
            if t.shape.len() != 2 && t.shape.len() != 3 {
                return Err(Error::malformed(
                    "RAW_TENSOR",
                    format!("volumes must be rank 2 or 3, got rank {}", t.shape.len()),
                ));
            }
            Volume::new(t.shape, t.data)
        }
    }
}

pub fn encode_volume(volume: &Volume, format: Format) -> Vec<u8> {
    match format {
        Format::Nifti1 => nifti::encode(volume),
        Format::RawTensor => RawTensor {
            dtype: DType::F32,
            shape: volume.shape().to_vec(),
            data: volume.voxels().to_vec(),
        }
        .encode(),
    }
}

/// Load a volume exactly as stored; no intensity normalization is applied here.
pub fn load_volume(path: &Path, format: Format) -> Result<Volume> {
    decode_volume(&read(path)?, format)
}

pub fn save_volume(path: &Path, volume: &Volume, format: Format) -> Result<()> {
    write(path, &encode_volume(volume, format))
}

pub fn load_mask(path: &Path, format: Format) -> Result<Mask> {
    let v = load_volume(path, format)?;
    Mask::from_reals(v.shape().to_vec(), v.voxels())
}

pub fn save_mask(path: &Path, mask: &Mask, format: Format) -> Result<()> {
    let v = Volume::new(mask.shape().to_vec(), mask.to_reals())?;
    save_volume(path, &v, format)
}
