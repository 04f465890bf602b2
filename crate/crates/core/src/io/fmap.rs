//! `FMAP` feature-map files.
//!
//! Layout (all little-endian): 4-byte magic `FMAP`, `u32` version, `u32` H,
//! `u32` W, `u32` C, then `H*W*C` `f32` values, row-major, channels fastest.

use std::path::Path;

use thiserror::Error;

use super::atomic_write;
use crate::types::{EmbeddingVector, FeatureMap};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum FmapError {
    #[error("bad magic {0:?}, expected \"FMAP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid shape {0}x{1}x{2}")]
    Shape(u32, u32, u32),
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("expected a 1x1xC vector file, found {0}x{1}")]
    NotAVector(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FmapError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            FmapError::BadMagic(_) => 10,
            FmapError::UnsupportedVersion(_) => 11,
            FmapError::Truncated { .. } => 12,
            FmapError::NonFinite(_) => 13,
            FmapError::Shape(..) => 14,
            FmapError::TrailingBytes(_) => 15,
            FmapError::NotAVector(..) => 16,
            FmapError::Io(_) => 17,
        }
    }
}

/// Serializes `map`; values are narrowed to `f32`.
pub fn encode(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [map.height(), map.width(), map.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMap, FmapError> {
    if bytes.len() < 4 {
        return Err(FmapError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FmapError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FmapError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(FmapError::UnsupportedVersion(version));
    }
    let (h, w, c) = (read_u32(bytes, 8), read_u32(bytes, 12), read_u32(bytes, 16));
    if h == 0 || w == 0 || c == 0 {
        return Err(FmapError::Shape(h, w, c));
    }
    let count = (h as usize)
        .checked_mul(w as usize)
        .and_then(|n| n.checked_mul(c as usize))
        .ok_or(FmapError::Shape(h, w, c))?;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(FmapError::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FmapError::TrailingBytes(bytes.len() - expected));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FmapError::NonFinite(i));
        }
        data.push(f64::from(v));
    }
    FeatureMap::new(h as usize, w as usize, c as usize, data).map_err(|_| FmapError::Shape(h, w, c))
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap, FmapError> {
    decode(&std::fs::read(path)?)
}

pub fn write_fmap(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FmapError> {
    Ok(atomic_write(path.as_ref(), &encode(map))?)
}

/// Reads a `1×1×C` file as an embedding vector.
pub fn read_vector(path: impl AsRef<Path>) -> Result<EmbeddingVector, FmapError> {
    let map = read_fmap(path)?;
    if map.height() != 1 || map.width() != 1 {
        return Err(FmapError::NotAVector(map.height(), map.width()));
    }
    let c = map.channels() as u32;
    EmbeddingVector::new(map.into_data()).map_err(|_| FmapError::Shape(1, 1, c))
}

pub fn write_vector(v: &EmbeddingVector, path: impl AsRef<Path>) -> Result<(), FmapError> {
    let map = FeatureMap::new(1, 1, v.dim(), v.as_slice().to_vec()).expect("vector is a valid 1x1 map");
    write_fmap(&map, path)
}
