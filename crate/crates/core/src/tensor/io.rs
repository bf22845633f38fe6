//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                 |
//! |--------------|-----------------------------------------|
//! | 4            | magic `DWT0`                            |
//! | 1            | precision tag: 0 = f32, 1 = f64         |
//! | 1            | rank                                    |
//! | 8 × rank     | dimensions as `u64`                     |
//! | rest         | row-major payload                       |

use std::path::Path;

use super::{numel, Element, Precision, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DWT0";

/// A tensor of either precision, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn precision(&self) -> Precision {
        match self {
            DynTensor::F32(_) => Precision::F32,
            DynTensor::F64(_) => Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested precision.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t.cast(),
        }
    }

    /// The tensor if it already has precision `T`.
    pub fn into_exact<T: Element>(self) -> Result<Tensor<T>> {
        let found = self.precision();
        if found != T::PRECISION {
            return Err(Error::PrecisionMismatch {
                expected: T::PRECISION,
                found,
            });
        }
        Ok(self.cast())
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.len() * T::PRECISION.byte_width());
    out.extend_from_slice(MAGIC);
    out.push(T::PRECISION.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn decode_as<T: Element>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let width = T::PRECISION.byte_width();
    let data = payload.chunks_exact(width).map(T::read_le).collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<DynTensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing DWT0 magic".into()));
    }
    let precision = Precision::from_tag(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown precision tag {}", bytes[4])))?;
    let rank = bytes[5] as usize;
    if rank == 0 {
        return Err(Error::Format("rank must be at least 1".into()));
    }
    let header = 6 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let shape = bytes[6..header]
        .chunks_exact(8)
        .map(|c| {
            let d = u64::from_le_bytes(c.try_into().expect("8 bytes"));
            usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))
        })
        .collect::<Result<Vec<usize>>>()?;
    if shape.contains(&0) {
        return Err(Error::Format(format!("zero dimension in {shape:?}")));
    }
    let expected = shape
        .iter()
        .try_fold(precision.byte_width(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            expected
        )));
    }
    debug_assert_eq!(expected, numel(&shape) * precision.byte_width());
    Ok(match precision {
        Precision::F32 => DynTensor::F32(decode_as(shape, payload)?),
        Precision::F64 => DynTensor::F64(decode_as(shape, payload)?),
    })
}

pub fn write<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<DynTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new([2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut want = b"DWT0".to_vec();
        want.extend([0u8, 2]);
        want.extend(2u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let good = encode(&Tensor::<f64>::ones([3]).unwrap());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());
        let mut bad_tag = good.clone();
        bad_tag[4] = 7;
        assert!(decode(&bad_tag).is_err());
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(Error::Format(_))));
        assert!(decode(b"DW").is_err());
    }

    #[test]
    fn precision_is_checked_on_exact_reads() {
        let t = decode(&encode(&Tensor::<f32>::ones([2]).unwrap())).unwrap();
        assert!(matches!(
            t.clone().into_exact::<f64>(),
            Err(Error::PrecisionMismatch { .. })
        ));
        assert_eq!(t.into_exact::<f32>().unwrap().data(), &[1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let t = Tensor::<f64>::from_fn(shape, |i| (i as f64 * 0.37 + seed as f64 * 1e-9).sin()).unwrap();
            let back = decode(&encode(&t)).unwrap().into_exact::<f64>().unwrap();
            prop_assert_eq!(back, t.clone());
            let t32 = t.cast::<f32>();
            let back32 = decode(&encode(&t32)).unwrap().into_exact::<f32>().unwrap();
            prop_assert_eq!(back32, t32);
        }
    }
}
