//! `SEMD` checkpoints.
//!
//! Layout (little-endian): magic `SEMD`, `u32` version, `u32` tensor count,
//! then per tensor `u32` out channels, `u32` kernel, `u32` in channels; then
//! `u32` parameter-set count (query, key), then every parameter of each set
//! as an `f64` in topology order.

use std::path::Path;

use thiserror::Error;

use super::atomic_write;
use crate::encoder::model::{EncoderParams, TOPOLOGY};

pub const MAGIC: &[u8; 4] = b"SEMD";
pub const VERSION: u32 = 1;
const SETS: u32 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"SEMD\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint topology does not match this encoder")]
    Topology,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("invalid parameters: {0}")]
    Params(#[from] crate::error::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub query: EncoderParams,
    pub key: EncoderParams,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(TOPOLOGY.len() as u32).to_le_bytes());
    for spec in TOPOLOGY.iter() {
        for d in [spec.out_channels, spec.kernel, spec.in_channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&SETS.to_le_bytes());
    for params in [&ckpt.query, &ckpt.key] {
        for v in params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    if r.u32()? as usize != TOPOLOGY.len() {
        return Err(CheckpointError::Topology);
    }
    for spec in TOPOLOGY.iter() {
        for d in [spec.out_channels, spec.kernel, spec.in_channels] {
            if r.u32()? as usize != d {
                return Err(CheckpointError::Topology);
            }
        }
    }
    if r.u32()? != SETS {
        return Err(CheckpointError::Topology);
    }
    let count = EncoderParams::param_count();
    let mut sets = Vec::with_capacity(2);
    for _ in 0..SETS {
        let raw = r.take(8 * count)?;
        let flat: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        sets.push(EncoderParams::from_flat(&flat)?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Topology);
    }
    let key = sets.pop().expect("two sets");
    let query = sets.pop().expect("two sets");
    Ok(Checkpoint { query, key })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    Ok(atomic_write(path.as_ref(), &encode(ckpt))?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}
