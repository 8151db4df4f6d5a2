//! Region partitioning of the latent grid.
//!
//! Pixels are described by their predicted-clean and noise channels plus two
//! scaled coordinates, then grouped by Quickshift (the default), uniform
//! patches or K-means. Helpers for mask dilation and small-region merging
//! live here as well.

mod density;
mod dilate;
mod kmeans;
mod merge;
mod quickshift;

pub use density::{estimate_density, knn_exact, knn_kdtree, DensityField, KdTree, EXACT_SCAN_LIMIT};
pub use dilate::dilate_mask;
pub use kmeans::{kmeans_partition, kmeans_with_objective};
pub use merge::enforce_min_region_size;
pub use quickshift::{quickshift_forest, quickshift_segment, QuickshiftParams};
pub(crate) use quickshift::adaptive_bandwidth;

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMap};

/// Per-pixel descriptors of length `2 * C + 2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureField {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != height * width * dim {
            return Err(Error::param(format!(
                "feature data length {} does not match {height}x{width}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("feature field contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn dist2(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.descriptor(i), self.descriptor(j))
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Concatenates `x_pred`, `eps` and `(γ_s·x/W, γ_s·y/H)` per pixel.
pub fn build_feature_field(
    x_pred: &LatentGrid,
    eps: &LatentGrid,
    spatial_weight: f64,
) -> Result<FeatureField> {
    x_pred.ensure_same_shape(eps, "feature field")?;
    if !(spatial_weight >= 0.0 && spatial_weight.is_finite()) {
        return Err(Error::param(format!(
            "spatial weight must be finite and >= 0, got {spatial_weight}"
        )));
    }
    let (h, w, c) = x_pred.shape();
    let dim = 2 * c + 2;
    let mut data = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            data.extend_from_slice(x_pred.pixel(i));
            data.extend_from_slice(eps.pixel(i));
            data.push(spatial_weight * x as f64 / w as f64);
            data.push(spatial_weight * y as f64 / h as f64);
        }
    }
    FeatureField::new(h, w, dim, data)
}

/// Rectangular `patch x patch` tiles, clipped at the bottom and right edges.
pub fn uniform_partition(height: usize, width: usize, patch: usize) -> Result<RegionMap> {
    if patch == 0 {
        return Err(Error::param("patch size must be >= 1"));
    }
    let cols = width.div_ceil(patch);
    let labels = (0..height * width)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            ((y / patch) * cols + x / patch) as u32
        })
        .collect();
    RegionMap::new(height, width, labels)
}
