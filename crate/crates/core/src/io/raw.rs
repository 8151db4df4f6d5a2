//! Minimal raw container: magic `RSGRID01`, three little-endian `u32`
//! dimensions (H, W, C), then little-endian `f64` values.

use std::path::Path;

use super::write_bytes;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;

pub const RAW_MAGIC: &[u8; 8] = b"RSGRID01";

pub fn encode_raw(g: &LatentGrid) -> Vec<u8> {
    let (h, w, c) = g.shape();
    let mut out = Vec::with_capacity(20 + g.data().len() * 8);
    out.extend_from_slice(RAW_MAGIC);
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in g.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<LatentGrid> {
    if bytes.len() < 20 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::format("magic", "not a raw grid file"));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let payload = &bytes[20..];
    if payload.len() != h * w * c * 8 {
        return Err(Error::format("data", format!("expected {} bytes, found {}", h * w * c * 8, payload.len())));
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    LatentGrid::new(h, w, c, data).map_err(|e| Error::format("data", e.to_string()))
}

pub fn write_raw(g: &LatentGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_raw(g))
}
