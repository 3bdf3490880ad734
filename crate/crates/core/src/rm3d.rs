//! The `RM3D` binary tensor format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `b"RM3D"`                           |
//! | 1            | format version, currently `1`             |
//! | 4            | rank `r` as `u32`                         |
//! | 4·r          | dims as `u32`, outermost first            |
//! | 1            | element type: `1` = u8, `2` = f32, `3` = f64 |
//! | n·size       | row-major payload                         |
//!
//! Several tensors may be written back to back into one file (a "bundle");
//! [`read_bundle`] returns them in file order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RM3D";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic bytes {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("unknown element type code {0}")]
    ElementType(u8),
    #[error("truncated tensor: {0}")]
    Truncated(io::Error),
    #[error("expected element type {expected:?}, found {found:?}")]
    WrongType { expected: ElementType, found: ElementType },
    #[error("dimension {0} does not fit in u32")]
    DimTooLarge(usize),
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    U8 = 1,
    F32 = 2,
    F64 = 3,
}

impl ElementType {
    fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            1 => Ok(Self::U8),
            2 => Ok(Self::F32),
            3 => Ok(Self::F64),
            other => Err(FormatError::ElementType(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn element_type(&self) -> ElementType {
        match self {
            Self::U8(_) => ElementType::U8,
            Self::F32(_) => ElementType::F32,
            Self::F64(_) => ElementType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::U8(v) => v.len(),
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A shape plus a typed payload, exactly what one RM3D record stores.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl RawTensor {
    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data: TensorData::U8(data) }
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data: TensorData::F32(data) }
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data: TensorData::F64(data) }
    }

    /// Stores `f32` tensors as `f32` and everything else as `f64`.
    pub fn from_real<T: Real>(t: &Tensor<T>) -> Self {
        let shape = t.shape().to_vec();
        if std::mem::size_of::<T>() == 4 {
            Self::f32(shape, t.data().iter().map(|v| v.as_f64() as f32).collect())
        } else {
            Self::f64(shape, t.data().iter().map(|v| v.as_f64()).collect())
        }
    }

    /// Converts any stored element type to `T`; `u8` payloads are taken as raw codes.
    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        let data: Vec<T> = match &self.data {
            TensorData::U8(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        };
        Tensor::from_vec(self.shape.clone(), data).expect("validated on read")
    }

    pub fn as_u8(&self) -> Result<&[u8], FormatError> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(FormatError::WrongType { expected: ElementType::U8, found: other.element_type() }),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, FormatError::DimTooLarge(d)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[self.data.element_type() as u8])?;
        match &self.data {
            TensorData::U8(v) => w.write_all(v)?,
            TensorData::F32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
            TensorData::F64(v) => {
                let mut buf = Vec::with_capacity(v.len() * 8);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to Vec cannot fail");
        out
    }

    /// Reads one record. Returns `Ok(None)` on clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>, FormatError> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut magic[got..]).map_err(FormatError::Truncated)?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(FormatError::Truncated(io::ErrorKind::UnexpectedEof.into()));
        }
        if magic != MAGIC {
            return Err(FormatError::Magic(magic));
        }
        let version = read_u8(r)?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let ty = ElementType::from_code(read_u8(r)?)?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * ty.size()];
        r.read_exact(&mut bytes).map_err(FormatError::Truncated)?;
        let data = match ty {
            ElementType::U8 => TensorData::U8(bytes),
            ElementType::F32 => TensorData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            ElementType::F64 => TensorData::F64(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        };
        Ok(Some(Self { shape, data }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        write_bundle(path, std::slice::from_ref(self))
    }

    /// Loads a file holding exactly one tensor (extra records are ignored).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| FormatError::Io { path: path.into(), source })?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)?
            .ok_or_else(|| FormatError::Truncated(io::ErrorKind::UnexpectedEof.into()))
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, FormatError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(FormatError::Truncated)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(FormatError::Truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_bundle(path: impl AsRef<Path>, tensors: &[RawTensor]) -> Result<(), FormatError> {
    let path = path.as_ref();
    let io_err = |source| FormatError::Io { path: path.into(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for t in tensors {
        t.write_to(&mut w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<Vec<RawTensor>, FormatError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| FormatError::Io { path: path.into(), source })?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    while let Some(t) = RawTensor::read_from(&mut r)? {
        out.push(t);
    }
    Ok(out)
}
