//! Array containers, image maps and recorded-trace replay.

mod image;
mod npy;
mod raw;
mod trace;

pub use image::{encode_mask_ppm, encode_pgm, encode_region_ppm, label_color, write_mask_ppm, write_pgm, write_region_ppm, PgmScale};
pub use npy::{decode_npy, encode_npy, encode_npy_f32, read_array, write_array};
pub use raw::{decode_raw, encode_raw, write_raw, RAW_MAGIC};
pub use trace::{
    load_trace, replay_csv, replay_schedule, write_trace, PlaybackDenoiser, ReplayResult, ReplayRow, Trace,
    TraceFrame, TraceManifest, TraceRecorder, TraceStep,
};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
