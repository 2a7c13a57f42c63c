//! Minimal NIfTI-1 single-file (`.nii`, uncompressed) reader and writer.
//!
//! Reads uint8, int16, int32, float32 and float64 payloads in either byte order
//! and applies `scl_slope`/`scl_inter`. Writes little-endian float32 with a
//! 352-byte data offset. Axis mapping: NIfTI `dim[1]` (fastest) becomes the last
//! axis of the volume shape.

use crate::error::{Error, Result};
use crate::volume::Volume;

const FORMAT: &str = "NIfTI-1";
pub const HEADER_LEN: usize = 348;
pub const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        self.bytes[at..at + N].try_into().expect("in-bounds header field")
    }

    fn i16(&self, at: usize) -> i16 {
        let b = self.array::<2>(at);
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b = self.array::<4>(at);
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b = self.array::<4>(at);
        if self.little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }

    fn f64(&self, at: usize) -> f64 {
        let b = self.array::<8>(at);
        if self.little {
            f64::from_le_bytes(b)
        } else {
            f64::from_be_bytes(b)
        }
    }
}

/// Parse a complete `.nii` file image.
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::malformed(FORMAT, "file shorter than 348-byte header"));
    }
    let little = match (
        i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
        i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")),
    ) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(Error::malformed(FORMAT, "sizeof_hdr is not 348")),
    };
    let r = Reader { bytes, little };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::malformed(FORMAT, "magic is not single-file `n+1`"));
    }
    let rank = r.i16(40);
    if !(2..=3).contains(&rank) {
        return Err(Error::malformed(FORMAT, format!("dim[0] = {rank}, only 2D/3D supported")));
    }
    let rank = rank as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut spacing = Vec::with_capacity(rank);
    for axis in 1..=rank {
        let d = r.i16(40 + 2 * axis);
        if d < 1 {
            return Err(Error::malformed(FORMAT, format!("dim[{axis}] = {d}")));
        }
        dims.push(d as usize);
        let p = f64::from(r.f32(76 + 4 * axis)).abs();
        spacing.push(if p.is_finite() && p > 0.0 { p } else { 1.0 });
    }
    dims.reverse();
    spacing.reverse();
    let count: usize = dims.iter().product();

    let datatype = r.i16(70);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::malformed(FORMAT, format!("unsupported datatype {other}"))),
    };
    let vox_offset = f64::from(r.f32(108));
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f64 || vox_offset.fract() != 0.0 {
        return Err(Error::malformed(FORMAT, format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let end = count
        .checked_mul(elem)
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| Error::malformed(FORMAT, "payload size overflows"))?;
    if bytes.len() < end {
        return Err(Error::malformed(
            FORMAT,
            format!("payload truncated: need {end} bytes, have {}", bytes.len()),
        ));
    }

    let mut slope = f64::from(r.f32(112));
    let inter = f64::from(r.f32(116));
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let payload = Reader {
        bytes: &bytes[start..end],
        little,
    };
    let voxels: Vec<f64> = (0..count)
        .map(|i| {
            let raw = match datatype {
                DT_UINT8 => f64::from(payload.bytes[i]),
                DT_INT16 => f64::from(payload.i16(2 * i)),
                DT_INT32 => f64::from(payload.i32(4 * i)),
                DT_FLOAT32 => f64::from(payload.f32(4 * i)),
                _ => payload.f64(8 * i),
            };
            raw * slope + inter
        })
        .collect();
    Volume::with_spacing(dims, spacing, voxels)
}

/// Encode a volume as a little-endian float32 `.nii` file image.
pub fn encode(volume: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let shape = volume.shape();
    let rank = shape.len();
    put_i16(&mut h, 40, rank as i16);
    for (axis, &d) in shape.iter().rev().enumerate() {
        put_i16(&mut h, 42 + 2 * axis, d as i16);
    }
    for axis in rank + 1..8 {
        put_i16(&mut h, 40 + 2 * axis, 1);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    for (axis, &s) in volume.spacing().iter().rev().enumerate() {
        put_f32(&mut h, 80 + 4 * axis, s as f32);
    }
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[344..348].copy_from_slice(b"n+1\0");
    h.reserve(volume.len() * 4);
    for &v in volume.voxels() {
        h.extend_from_slice(&(v as f32).to_le_bytes());
    }
    h
}
