//! Self-describing little-endian tensor container.
//!
//! Layout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic b"RAWT"
//! 4       1           version (1)
//! 5       1           dtype code: 32 = f32, 64 = f64
//! 6       1           rank (1..=8)
//! 7       8 * rank    shape, u64 little-endian, slowest axis first
//! ..      n * dtype   row-major payload, little-endian
//! ```
//!
//! The payload must be exactly `product(shape)` elements; trailing bytes are rejected.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RAWT";
pub const VERSION: u8 = 1;
pub const MAX_RANK: usize = 8;
const FORMAT: &str = "RAW_TENSOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 32,
            DType::F64 => 64,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            32 => Some(DType::F32),
            64 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Decoded tensor; values are widened to f64 regardless of the stored dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count = element_count(&shape)?;
        if count != data.len() {
            return Err(Error::LengthMismatch {
                left: count,
                right: data.len(),
            });
        }
        Ok(Self { dtype, shape, data })
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        7 + 8 * self.shape.len() + self.data.len() * self.dtype.size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &s in &self.shape {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        match self.dtype {
            DType::F32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    /// Decode a tensor that occupies the whole of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (tensor, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::malformed(
                FORMAT,
                format!("{} trailing bytes after payload", bytes.len() - used),
            ));
        }
        Ok(tensor)
    }

    /// Decode a tensor from the start of `bytes`, returning it with the number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 7 {
            return Err(Error::malformed(FORMAT, "header shorter than 7 bytes"));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::malformed(FORMAT, "bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::malformed(FORMAT, format!("unsupported version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5])
            .ok_or_else(|| Error::malformed(FORMAT, format!("unknown dtype code {}", bytes[5])))?;
        let rank = bytes[6] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::malformed(FORMAT, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let header_len = 7 + 8 * rank;
        if bytes.len() < header_len {
            return Err(Error::malformed(FORMAT, "truncated shape"));
        }
        let shape = bytes[7..header_len]
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                usize::try_from(v).map_err(|_| Error::malformed(FORMAT, "dimension exceeds usize"))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = element_count(&shape).map_err(|_| Error::malformed(FORMAT, "shape overflows"))?;
        let payload_len = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::malformed(FORMAT, "payload size overflows"))?;
        let available = bytes.len() - header_len;
        if available < payload_len {
            return Err(Error::malformed(
                FORMAT,
                format!("payload truncated: expected {payload_len} bytes, found {available}"),
            ));
        }
        let payload = &bytes[header_len..header_len + payload_len];
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        };
        Ok((Self { dtype, shape, data }, header_len + payload_len))
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::malformed(FORMAT, format!("rank {} outside 1..={MAX_RANK}", shape.len())));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::malformed(FORMAT, "shape overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_4x4() {
        let t = RawTensor::new(DType::F32, vec![4, 4], vec![0.0; 16]).unwrap();
        let bytes = t.encode();
        assert_eq!(bytes.len(), 7 + 16 + 64);
        assert_eq!(RawTensor::decode(&bytes).unwrap(), t);
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let bytes = RawTensor::new(DType::F32, vec![4, 4], vec![0.0; 16]).unwrap().encode();
        let err = RawTensor::decode(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
    }

    #[test]
    fn rejects_garbage_headers() {
        assert!(RawTensor::decode(b"").is_err());
        assert!(RawTensor::decode(b"RAWX\x01\x20\x01").is_err());
        assert!(RawTensor::decode(b"RAWT\x02\x20\x01").is_err());
        assert!(RawTensor::decode(b"RAWT\x01\x10\x01").is_err());
        assert!(RawTensor::decode(b"RAWT\x01\x20\x00").is_err());
        // Enormous declared shape with no payload must fail without allocating.
        let mut huge = b"RAWT\x01\x40\x02".to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(RawTensor::decode(&huge).is_err());
        let mut big = b"RAWT\x01\x40\x01".to_vec();
        big.extend_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(RawTensor::decode(&big).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = RawTensor::new(DType::F64, vec![2], vec![1.0, 2.0]).unwrap().encode();
        bytes.push(0);
        assert!(RawTensor::decode(&bytes).is_err());
        let (t, used) = RawTensor::decode_prefix(&bytes).unwrap();
        assert_eq!(used, bytes.len() - 1);
        assert_eq!(t.data, vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn f64_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed ^ i as u64) as f64).sin()).collect();
            let t = RawTensor::new(DType::F64, shape, data).unwrap();
            prop_assert_eq!(RawTensor::decode(&t.encode()).unwrap(), t);
        }
    }
}
