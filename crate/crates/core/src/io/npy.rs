//! NPY version 1.0 containers holding `(H, W, C)` float arrays.

use std::path::Path;

use super::raw::{decode_raw, RAW_MAGIC};
use super::write_bytes;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

fn header(descr: &str, shape: (usize, usize, usize)) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        shape.0, shape.1, shape.2
    );
    // magic + version + u16 length, then the dict padded with spaces and a newline.
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let len = dict.len() + pad + 1;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(pad));
    out.push(b'\n');
    out
}

/// Little-endian 8-byte floats.
pub fn encode_npy(g: &LatentGrid) -> Vec<u8> {
    let mut out = header("<f8", g.shape());
    for v in g.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Little-endian 4-byte floats (values are rounded to `f32`).
pub fn encode_npy_f32(g: &LatentGrid) -> Vec<u8> {
    let mut out = header("<f4", g.shape());
    for v in g.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::format(key, "missing from header"))?
        + pat.len();
    Ok(dict[start..].trim_start())
}

fn parse_shape(dict: &str) -> Result<Vec<usize>> {
    let rest = dict_value(dict, "shape")?;
    let body = rest
        .strip_prefix('(')
        .and_then(|r| r.split_once(')'))
        .map(|(b, _)| b)
        .ok_or_else(|| Error::format("shape", "expected a tuple"))?;
    body.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::format("shape", format!("bad dimension `{s}`"))))
        .collect()
}

pub fn decode_npy(bytes: &[u8]) -> Result<LatentGrid> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::format("magic", "not an NPY file"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::format("version", format!("unsupported version {}.{}", bytes[6], bytes[7])));
    }
    let len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = 10 + len;
    if bytes.len() < end {
        return Err(Error::format("header_len", "header runs past end of file"));
    }
    let dict = std::str::from_utf8(&bytes[10..end]).map_err(|_| Error::format("header", "not ASCII"))?;

    let descr_raw = dict_value(dict, "descr")?;
    let descr = descr_raw
        .strip_prefix('\'')
        .and_then(|r| r.split_once('\''))
        .map(|(d, _)| d)
        .ok_or_else(|| Error::format("descr", "expected a quoted string"))?;
    let width = match descr {
        "<f8" => 8,
        "<f4" => 4,
        other => return Err(Error::format("descr", format!("unsupported dtype `{other}`"))),
    };
    let fortran = dict_value(dict, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(Error::format("fortran_order", "only C-contiguous arrays are supported"));
    }
    if !fortran.starts_with("False") {
        return Err(Error::format("fortran_order", "expected True or False"));
    }
    let shape = parse_shape(dict)?;
    if shape.len() != 3 {
        return Err(Error::format("shape", format!("expected rank 3 (H, W, C), got rank {}", shape.len())));
    }
    let count = shape.iter().product::<usize>();
    let payload = &bytes[end..];
    if payload.len() != count * width {
        return Err(Error::format(
            "data",
            format!("expected {} bytes of payload, found {}", count * width, payload.len()),
        ));
    }
    let data: Vec<f64> = if width == 8 {
        payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    LatentGrid::new(shape[0], shape[1], shape[2], data).map_err(|e| Error::format("data", e.to_string()))
}

/// Reads an NPY or raw grid file, detected by its magic bytes.
pub fn read_array(path: impl AsRef<Path>) -> Result<LatentGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes)
    } else {
        decode_npy(&bytes)
    }
}

pub fn write_array(g: &LatentGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_npy(g))
}
