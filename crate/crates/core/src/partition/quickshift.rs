//! Quickshift mode seeking with a spatial link window.
//!
//! Each pixel links to the feature-nearest pixel of higher density inside a
//! Chebyshev window, provided the feature distance stays within
//! `max_link_dist`. Equal densities are ordered by linear index, so the lower
//! index counts as "higher". Pixels without a valid parent are roots; the
//! trees under the roots are the regions.

use rayon::prelude::*;

use super::{DensityField, FeatureField};
use crate::error::{Error, Result};
use crate::grid::RegionMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuickshiftParams {
    /// Kernel width `h` in descriptor space.
    pub bandwidth: f64,
    /// Maximum Chebyshev distance (pixels) between a pixel and its parent.
    pub window: usize,
    /// Neighbours used by the density estimate.
    pub knn: usize,
    /// Scale applied to the normalized coordinates in each descriptor.
    pub spatial_weight: f64,
    /// Parent links longer than this (descriptor space) are cut.
    pub max_link_dist: f64,
    /// Reserved for randomized indexes; the exact scan and kd-tree are deterministic.
    pub seed: u64,
}

impl QuickshiftParams {
    /// Scale-adaptive defaults: `h = 0.5 * std(‖f_i‖)`, `knn = 16`,
    /// `max_link_dist = 3h`, `window = 5`.
    pub fn adaptive(field: &FeatureField, spatial_weight: f64) -> Self {
        let h = adaptive_bandwidth(field);
        Self {
            bandwidth: h,
            window: 5,
            knn: 16,
            spatial_weight,
            max_link_dist: 3.0 * h,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::param(format!("bandwidth must be > 0, got {}", self.bandwidth)));
        }
        if self.window < 1 {
            return Err(Error::param("quickshift window must be >= 1"));
        }
        if self.knn < 1 {
            return Err(Error::param("knn must be >= 1"));
        }
        if self.max_link_dist <= 0.0 || self.max_link_dist.is_nan() {
            return Err(Error::param(format!(
                "max_link_dist must be > 0, got {}",
                self.max_link_dist
            )));
        }
        Ok(())
    }
}

/// Half the standard deviation of descriptor norms, or 1.0 on a degenerate field.
pub(crate) fn adaptive_bandwidth(field: &FeatureField) -> f64 {
    let n = field.len() as f64;
    let norms: Vec<f64> = (0..field.len())
        .map(|i| field.descriptor(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let h = 0.5 * var.sqrt();
    if h > 1e-12 {
        h
    } else {
        1.0
    }
}

/// Parent of every pixel (`None` for roots).
pub fn quickshift_forest(
    f: &FeatureField,
    rho: &DensityField,
    p: &QuickshiftParams,
) -> Result<Vec<Option<usize>>> {
    p.validate()?;
    if rho.height() != f.height() || rho.width() != f.width() {
        return Err(Error::param("density and feature field shapes differ"));
    }
    let (h, w) = (f.height(), f.width());
    let dens = rho.values();
    let limit2 = p.max_link_dist * p.max_link_dist;
    let parents = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let y0 = y.saturating_sub(p.window);
            let y1 = y.saturating_add(p.window).min(h - 1);
            let x0 = x.saturating_sub(p.window);
            let x1 = x.saturating_add(p.window).min(w - 1);
            let mut best: Option<(f64, usize)> = None;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let j = yy * w + xx;
                    let higher = dens[j] > dens[i] || (dens[j] == dens[i] && j < i);
                    if !higher {
                        continue;
                    }
                    let d2 = f.dist2(i, j);
                    if d2 > limit2 {
                        continue;
                    }
                    // Scan order is ascending in j, so strict < keeps the lowest index on ties.
                    if best.is_none_or(|(bd, _)| d2 < bd) {
                        best = Some((d2, j));
                    }
                }
            }
            best.map(|(_, j)| j)
        })
        .collect();
    Ok(parents)
}

/// Segments a feature field into the trees of its Quickshift forest.
pub fn quickshift_segment(
    f: &FeatureField,
    rho: &DensityField,
    p: &QuickshiftParams,
) -> Result<RegionMap> {
    let parents = quickshift_forest(f, rho, p)?;
    let n = parents.len();
    let mut root: Vec<usize> = vec![usize::MAX; n];
    let mut path = Vec::new();
    for start in 0..n {
        let mut cur = start;
        while root[cur] == usize::MAX {
            match parents[cur] {
                Some(par) => {
                    path.push(cur);
                    cur = par;
                }
                None => {
                    root[cur] = cur;
                    break;
                }
            }
        }
        let r = root[cur];
        for node in path.drain(..) {
            root[node] = r;
        }
    }
    RegionMap::from_labels(f.height(), f.width(), &root)
}
