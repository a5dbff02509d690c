//! SATN tensor files.
//!
//! Layout, all little-endian:
//! - magic `b"SATN"` (4 bytes)
//! - version: u16 (currently 1)
//! - rank: u16
//! - dims: rank * u64
//! - data: product(dims) * f32, row-major
//!
//! Per-head attention inputs are stored as `[heads, 3, L, d]` with the second
//! axis ordered q, k, v. A rank-3 `[3, L, d]` file is read as a single head.

use std::fs;
use std::path::Path;

use sparse_accel::{AttnMatrices, Matrix};

pub const MAGIC: &[u8; 4] = b"SATN";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("not a SATN tensor file (offset 0)")]
    BadMagic,
    #[error("unsupported SATN version {version} at offset {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("truncated {what} at offset {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("dims {dims:?} overflow the addressable size")]
    TooLarge { dims: Vec<u64> },
    #[error("expected a [heads, 3, L, d] or [3, L, d] tensor, found dims {dims:?}")]
    BadShape { dims: Vec<usize> },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TensorError {
    /// Stable short name used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            TensorError::BadMagic => "bad_magic",
            TensorError::UnsupportedVersion { .. } => "unsupported_version",
            TensorError::Truncated { .. } => "truncated",
            TensorError::TrailingBytes { .. } => "trailing_bytes",
            TensorError::TooLarge { .. } => "too_large",
            TensorError::BadShape { .. } => "bad_shape",
            TensorError::NonFinite { .. } => "non_finite",
            TensorError::Io { .. } => "io",
        }
    }

    /// Byte offset the error refers to, when there is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            TensorError::BadMagic => Some(0),
            TensorError::UnsupportedVersion { offset, .. }
            | TensorError::Truncated { offset, .. }
            | TensorError::TrailingBytes { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "dims do not match data"
        );
        Self { dims, data }
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u16).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn take<'a>(
    bytes: &'a [u8],
    offset: usize,
    len: usize,
    what: &'static str,
) -> Result<&'a [u8], TensorError> {
    let actual = bytes.len().saturating_sub(offset);
    if actual < len {
        return Err(TensorError::Truncated {
            what,
            offset,
            expected: len,
            actual,
        });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorError::BadMagic);
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion { version, offset: 4 });
    }
    let rank = u16::from_le_bytes(take(bytes, 6, 2, "rank")?.try_into().unwrap()) as usize;
    let header = take(bytes, 8, 8 * rank, "dims")?;
    let raw: Vec<u64> = header
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let payload = raw
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .ok_or_else(|| TensorError::TooLarge { dims: raw.clone() })?;
    let start = 8 + 8 * rank;
    let body = take(bytes, start, payload, "payload")?;
    if bytes.len() > start + payload {
        return Err(TensorError::TrailingBytes {
            offset: start + payload,
            extra: bytes.len() - start - payload,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        dims: raw.into_iter().map(|d| d as usize).collect(),
        data,
    })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    fs::write(path, encode(t)).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Packs causal heads into a `[heads, 3, L, d]` tensor.
pub fn heads_to_tensor(heads: &[AttnMatrices<f32>]) -> Tensor {
    let (l, d) = heads.first().map_or((0, 0), |m| (m.n(), m.d_head()));
    let mut data = Vec::with_capacity(heads.len() * 3 * l * d);
    for m in heads {
        for x in [m.q(), m.k(), m.v()] {
            data.extend_from_slice(x.as_slice());
        }
    }
    Tensor::new(vec![heads.len(), 3, l, d], data)
}

/// Unpacks a `[heads, 3, L, d]` (or `[3, L, d]`) tensor into causal heads.
pub fn tensor_to_heads(t: &Tensor) -> Result<Vec<AttnMatrices<f32>>, TensorError> {
    let (h, l, d) = match t.dims[..] {
        [h, 3, l, d] if h > 0 && l > 0 && d > 0 => (h, l, d),
        [3, l, d] if l > 0 && d > 0 => (1, l, d),
        _ => {
            return Err(TensorError::BadShape {
                dims: t.dims.clone(),
            })
        }
    };
    if let Some(index) = t.data.iter().position(|x| !x.is_finite()) {
        return Err(TensorError::NonFinite { index });
    }
    let block = l * d;
    let mat = |i: usize| Matrix::new(l, d, t.data[i * block..(i + 1) * block].to_vec()).unwrap();
    Ok((0..h)
        .map(|head| {
            AttnMatrices::causal(mat(3 * head), mat(3 * head + 1), mat(3 * head + 2))
                .expect("finite and shape-checked")
        })
        .collect())
}
