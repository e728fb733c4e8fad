//! The `.dwt` tensor container.
//!
//! Layout: 8-byte magic `DWTENS01`, one dtype byte (0 = f32, 1 = f64,
//! 2 = i32, 3 = u8), one rank byte, `rank` little-endian `u32` dimensions,
//! then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::tensor_nn::{FeatureMap, Shape};
use crate::{Error, FormatError, Result, Scalar};

pub const MAGIC: &[u8; 8] = b"DWTENS01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    I32 = 2,
    U8 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::I32),
            3 => Ok(DType::U8),
            other => Err(FormatError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I32 => "i32",
            DType::U8 => "u8",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I32(_) => DType::I32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array as stored in a `.dwt` file.
#[derive(Clone, Debug, PartialEq)]
pub struct DwTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

fn shape_string(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl DwTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, FormatError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FormatError::ShapeMismatch {
                expected: format!("{n} elements for {}", shape_string(&shape)),
                found: data.len().to_string(),
            });
        }
        if shape.len() > u8::MAX as usize || shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(FormatError::ShapeMismatch {
                expected: "rank <= 255 and dims < 2^32".into(),
                found: shape_string(&shape),
            });
        }
        Ok(DwTensor { shape, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn from_map<T: Scalar>(map: &FeatureMap<T>) -> Self {
        let s = map.shape();
        DwTensor {
            shape: vec![s.channels, s.height, s.width],
            data: scalar_data(map.data()),
        }
    }

    /// Reads back a `C x H x W` map; the stored dtype must equal `T`'s.
    pub fn to_map<T: Scalar>(&self) -> Result<FeatureMap<T>, FormatError> {
        let [c, h, w] = self.shape[..] else {
            return Err(FormatError::ShapeMismatch {
                expected: "rank 3 (C x H x W)".into(),
                found: shape_string(&self.shape),
            });
        };
        let values = self.scalar_values::<T>()?;
        FeatureMap::new(c, h, w, values).map_err(|_| FormatError::ShapeMismatch {
            expected: Shape::new(c, h, w).to_string(),
            found: self.data.len().to_string(),
        })
    }

    pub fn scalar_values<T: Scalar>(&self) -> Result<Vec<T>, FormatError> {
        let mismatch = || FormatError::DtypeMismatch {
            expected: T::DTYPE.name(),
            found: self.dtype().name(),
        };
        if self.dtype() != T::DTYPE {
            return Err(mismatch());
        }
        Ok(match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            _ => return Err(mismatch()),
        })
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<(), FormatError> {
        if self.shape != expected {
            return Err(FormatError::ShapeMismatch {
                expected: shape_string(expected),
                found: shape_string(&self.shape),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.shape.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype() as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let header = |need: usize| {
            if bytes.len() < need {
                Err(FormatError::Truncated {
                    expected: need,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        header(10)?;
        let dtype = DType::from_code(bytes[8])?;
        let rank = bytes[9] as usize;
        let dims_end = 10 + 4 * rank;
        header(dims_end)?;
        let shape: Vec<usize> = bytes[10..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let count: usize = shape.iter().product();
        let payload = &bytes[dims_end..];
        let need = count * dtype.size();
        if payload.len() < need {
            return Err(FormatError::Truncated {
                expected: dims_end + need,
                found: bytes.len(),
            });
        }
        if payload.len() > need {
            return Err(FormatError::TrailingBytes(payload.len() - need));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            DType::I32 => TensorData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(DwTensor { shape, data })
    }
}

pub(crate) fn scalar_data<T: Scalar>(values: &[T]) -> TensorData {
    match T::DTYPE {
        DType::F64 => TensorData::F64(values.iter().map(|v| v.as_f64()).collect()),
        _ => TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &DwTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DwTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DwTensor::decode(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_map<T: Scalar>(path: impl AsRef<Path>, map: &FeatureMap<T>) -> Result<()> {
    write_tensor(path, &DwTensor::from_map(map))
}

pub fn read_map<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    read_tensor(path)?.to_map().map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn scalar_round_trip() {
        let t = DwTensor::new(vec![], TensorData::F64(vec![std::f64::consts::PI])).unwrap();
        let bytes = t.encode();
        assert_eq!(bytes.len(), 8 + 2 + 8);
        assert_eq!(DwTensor::decode(&bytes).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let t = DwTensor::new(vec![2, 1], TensorData::U8(vec![7, 9])).unwrap();
        let bytes = t.encode();
        assert_eq!(&bytes[..8], b"DWTENS01");
        assert_eq!(bytes[8], 3);
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..18], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[18..], &[7, 9]);
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let t = DwTensor::new(vec![3], TensorData::I32(vec![1, 2, 3])).unwrap();
        let mut bytes = t.encode();
        bytes[3] ^= 0xff;
        assert_eq!(DwTensor::decode(&bytes), Err(FormatError::BadMagic));
        assert_eq!(DwTensor::decode(b"DW"), Err(FormatError::BadMagic));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_distinct() {
        let t = DwTensor::new(vec![2, 2], TensorData::F32(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let bytes = t.encode();
        assert!(matches!(
            DwTensor::decode(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(DwTensor::decode(&bytes[..11]), Err(FormatError::Truncated { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert_eq!(DwTensor::decode(&longer), Err(FormatError::TrailingBytes(1)));
        let mut bad_dtype = bytes;
        bad_dtype[8] = 9;
        assert_eq!(DwTensor::decode(&bad_dtype), Err(FormatError::UnknownDtype(9)));
    }

    #[test]
    fn dtype_and_rank_mismatch_on_map_read() {
        let t = DwTensor::new(vec![1, 2, 2], TensorData::F32(vec![0.0; 4])).unwrap();
        assert!(matches!(t.to_map::<f64>(), Err(FormatError::DtypeMismatch { .. })));
        let flat = DwTensor::new(vec![4], TensorData::F32(vec![0.0; 4])).unwrap();
        assert!(matches!(flat.to_map::<f32>(), Err(FormatError::ShapeMismatch { .. })));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let map = FeatureMap::<f32>::from_fn(Shape::new(3, 4, 4), |c, y, x| {
            ((c * 31 + y * 7 + x) as f32).sin() * 1e-3 + f32::EPSILON * x as f32
        });
        let path = dir.path().join("a.dwt");
        write_map(&path, &map).unwrap();
        let back: FeatureMap<f32> = read_map(&path).unwrap();
        let a: Vec<u32> = map.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            dims in proptest::collection::vec(0usize..5, 0..4),
            seed in any::<u64>(),
            dtype in 0u8..4,
        ) {
            let n: usize = dims.iter().product();
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s };
            let data = match dtype {
                0 => TensorData::F32((0..n).map(|_| f32::from_bits((next() >> 32) as u32)).collect()),
                1 => TensorData::F64((0..n).map(|_| f64::from_bits(next())).collect()),
                2 => TensorData::I32((0..n).map(|_| next() as i32).collect()),
                _ => TensorData::U8((0..n).map(|_| next() as u8).collect()),
            };
            let t = DwTensor::new(dims, data).unwrap();
            let bytes = t.encode();
            let back = DwTensor::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
