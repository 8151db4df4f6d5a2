//! Region-adaptive sparse sampling for diffusion latents.
//!
//! Each denoising step partitions the latent grid into regions, scores them by
//! local complexity and re-evaluates only the highest-scoring ones under a
//! per-step pixel budget. Remaining pixels advance with noise predictions
//! extrapolated from their history.

pub mod complexity;
pub mod error;
pub mod extrapolate;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod partition;
pub mod sampler;
pub mod ssd;

pub use error::{Error, Result};
pub use grid::{BitMask, LatentGrid, RegionMap, ScheduleKind, SigmaSchedule};

/// Version string recorded in run reports.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
