//! Embedding containers and the `HVNE` binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HVNE"
//!      4     4  version u32 = 1
//!      8     1  dtype u8 = 1 (float32)
//!      9     3  reserved, zero
//!     12     8  rows u64
//!     20     8  dim u64
//!     28     …  rows*dim float32 LE, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HVNE";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 28;

/// Row-major `rows x dim` float matrix holding one vector per token or patch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptyShape { rows, dim });
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Keeps the rows whose index is listed, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data)
    }
}

/// A single d-dimensional vector (pooled page, VS-page or query representation).
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    data: Vec<f32>,
}

impl PooledVector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyShape { rows: 1, dim: 0 });
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(Self { data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Views the vector as a 1 x d matrix.
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: 1,
            dim: self.data.len(),
            data: self.data.clone(),
        }
    }

    /// Accepts a 1 x d matrix.
    pub fn from_matrix(m: EmbeddingMatrix) -> Result<Self> {
        if m.rows != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: m.rows,
            });
        }
        Ok(Self { data: m.data })
    }
}

/// Serializes a matrix into the `HVNE` byte layout.
pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&[0u8; 3]);
    buf.extend_from_slice(&(matrix.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.dim as u64).to_le_bytes());
    for v in &matrix.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses the `HVNE` byte layout. `path` is used for error context only.
pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let dtype = bytes[8];
    if version != FORMAT_VERSION || dtype != DTYPE_F32 {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            dtype,
        });
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let dim = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: u64::MAX,
            found: bytes.len() as u64,
        })?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows as usize, dim as usize, data)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_embeddings(matrix))
        .map_err(|e| Error::io(path, e))
}

pub fn load_pooled(path: impl AsRef<Path>) -> Result<PooledVector> {
    PooledVector::from_matrix(load_embeddings(path)?)
}

pub fn write_pooled(vector: &PooledVector, path: impl AsRef<Path>) -> Result<()> {
    write_embeddings(&vector.to_matrix(), path)
}
