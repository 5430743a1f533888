//! Dense embedding matrices, their binary file form, and the vector math
//! shared by the rest of the crate.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"SAVR"
//! 4       4     version u32 (= 1)
//! 8       8     rows    u64
//! 16      8     dim     u64
//! 24      4*n   rows*dim f32, row-major
//! ```
//!
//! Values are stored as `f32`; every reduction in this crate accumulates in `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SAVR";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("matrix dim must be at least 1"));
        }
        if data.len() != rows * dim {
            return Err(Error::contract(format!(
                "matrix data length {} does not equal rows*dim = {}*{}",
                data.len(),
                rows,
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite matrix entry at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from equal-length rows. An empty row list needs an explicit `dim`.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], dim: Option<usize>) -> Result<Self> {
        let dim = match (rows.first(), dim) {
            (Some(r), _) => r.as_ref().len(),
            (None, Some(d)) => d,
            (None, None) => return Err(Error::contract("cannot infer dim of an empty matrix")),
        };
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::contract(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows32: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f32).collect())
            .collect();
        Self::from_rows(&rows32, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the binary form; `path` is used only for error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(format("bad magic"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format(&format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if dim == 0 {
            return Err(format("dim is zero"));
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format("rows*dim overflows"))?;
        if payload.len() as u64 != expected {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected,
                found: payload.len() as u64,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows as usize, dim as usize, data).map_err(|e| match e {
            Error::Contract(reason) => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

pub fn write_matrix(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&matrix.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes, path)
}

/// Cosine similarity together with a flag raised when either input had zero norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn dot<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

pub fn norm<A: Copy + Into<f64>>(a: &[A]) -> f64 {
    a.iter()
        .map(|&x| {
            let x = x.into();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity with zero-norm inputs mapped to `0.0` and flagged.
///
/// Panics if the lengths differ; use [`try_cosine`] on untrusted input.
pub fn cosine_checked<A, B>(a: &[A], b: &[B]) -> Cosine
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    assert_eq!(a.len(), b.len(), "cosine of vectors with different dims");
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Cosine {
            value: 0.0,
            degenerate: true,
        };
    }
    let c = dot(a, b) / (na * nb);
    Cosine {
        value: c.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

pub fn cosine<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    cosine_checked(a, b).value
}

pub fn try_cosine<A, B>(a: &[A], b: &[B]) -> Result<Cosine>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_checked(a, b))
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}
