//! Binary PGM (scalar maps) and PPM (region labels, masks) writers.

use std::path::Path;

use super::write_bytes;
use crate::error::{Error, Result};
use crate::grid::{BitMask, RegionMap};

/// How scalar values map to gray levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgmScale {
    /// Per-file min-max; a constant map is all zeros.
    MinMax,
    /// Fixed `[lo, hi]`, clamped.
    Absolute { lo: f64, hi: f64 },
}

pub fn encode_pgm(values: &[f64], height: usize, width: usize, scale: PgmScale) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::param("pgm value count does not match dimensions"));
    }
    let (lo, hi) = match scale {
        PgmScale::MinMax => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        PgmScale::Absolute { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::param("absolute pgm scale needs lo < hi"));
            }
            (lo, hi)
        }
    };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(values: &[f64], height: usize, width: usize, scale: PgmScale, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(values, height, width, scale)?)
}

/// Deterministic palette color for a region label.
pub fn label_color(label: u32) -> [u8; 3] {
    let h = label.wrapping_mul(0x9E37_79B1);
    [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
}

pub fn encode_region_ppm(m: &RegionMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    for &l in m.labels() {
        out.extend_from_slice(&label_color(l));
    }
    out
}

pub fn write_region_ppm(m: &RegionMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_region_ppm(m))
}

/// Set pixels white, others black.
pub fn encode_mask_ppm(mask: &BitMask) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    for &b in mask.bits() {
        let v = if b { 255 } else { 0 };
        out.extend_from_slice(&[v, v, v]);
    }
    out
}

pub fn write_mask_ppm(mask: &BitMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask_ppm(mask))
}
