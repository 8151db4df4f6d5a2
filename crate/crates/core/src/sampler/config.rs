use serde::{Deserialize, Serialize};

use crate::complexity::{ComplexityWeights, ScoreVariant};
use crate::error::{Error, Result};
use crate::extrapolate::ExtrapolationParams;
use crate::partition::{adaptive_bandwidth, FeatureField, QuickshiftParams};
use crate::ssd::{RefreshPolicy, SsdParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioner {
    Quickshift,
    Uniform,
    Kmeans,
}

/// How regions are prioritised on sparse steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Complexity,
    /// Seeded random region order under the same budget rule.
    Random,
}

/// What cached pixels do on sparse steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachedUpdate {
    /// Step with the extrapolated noise prediction.
    Extrapolate,
    /// Hold the latent unchanged.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuickshiftConfig {
    /// Kernel width; `None` picks half the std of descriptor norms.
    pub bandwidth: Option<f64>,
    pub window: usize,
    pub knn: usize,
    pub spatial_weight: f64,
    /// Link cutoff; `None` means three bandwidths.
    pub max_link_dist: Option<f64>,
    /// Regions smaller than this are merged into a neighbour.
    pub min_region_size: usize,
    pub seed: u64,
}

impl Default for QuickshiftConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            window: 5,
            knn: 16,
            spatial_weight: 0.5,
            max_link_dist: None,
            min_region_size: 8,
            seed: 0,
        }
    }
}

impl QuickshiftConfig {
    /// Concrete parameters for one feature field.
    pub fn resolve(&self, field: &FeatureField) -> QuickshiftParams {
        let h = self.bandwidth.unwrap_or_else(|| adaptive_bandwidth(field));
        QuickshiftParams {
            bandwidth: h,
            window: self.window,
            knn: self.knn,
            spatial_weight: self.spatial_weight,
            max_link_dist: self.max_link_dist.unwrap_or(3.0 * h),
            seed: self.seed,
        }
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(("bandwidth", format!("must be > 0, got {h}")));
            }
        }
        if self.window < 1 {
            return Err(("window", "must be >= 1".into()));
        }
        if self.knn < 1 {
            return Err(("knn", "must be >= 1".into()));
        }
        if !(self.spatial_weight >= 0.0 && self.spatial_weight.is_finite()) {
            return Err(("spatial_weight", format!("must be >= 0, got {}", self.spatial_weight)));
        }
        if let Some(d) = self.max_link_dist {
            if !(d > 0.0) {
                return Err(("max_link_dist", format!("must be > 0, got {d}")));
            }
        }
        if self.min_region_size < 1 {
            return Err(("min_region_size", "must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub ssd: SsdParams,
    pub refresh: RefreshPolicy,
    pub quickshift: QuickshiftConfig,
    pub partitioner: Partitioner,
    /// Tile size for the uniform partitioner.
    pub patch: usize,
    pub kmeans_k: usize,
    pub kmeans_iters: usize,
    pub weights: ComplexityWeights,
    pub scorer: ScoreVariant,
    /// Fraction of each region's pixels averaged into its score.
    pub q: f64,
    /// Dilation radius applied to the selected regions.
    pub dilation: usize,
    pub extrapolation: ExtrapolationParams,
    /// Re-segment every this many steps.
    pub segment_every: usize,
    pub selection: Selection,
    pub cached_update: CachedUpdate,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ssd: SsdParams::default(),
            refresh: RefreshPolicy::default(),
            quickshift: QuickshiftConfig::default(),
            partitioner: Partitioner::Quickshift,
            patch: 4,
            kmeans_k: 32,
            kmeans_iters: 20,
            weights: ComplexityWeights::default(),
            scorer: ScoreVariant::Ours,
            q: 0.2,
            dilation: 1,
            extrapolation: ExtrapolationParams::default(),
            segment_every: 1,
            selection: Selection::Complexity,
            cached_update: CachedUpdate::Extrapolate,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Defaults with the sampling ratio (`ssd.p_min`) and dilation set.
    pub fn with_ratio(ratio: f64, dilation: usize) -> Self {
        Self {
            ssd: SsdParams::with_ratio(ratio),
            dilation,
            ..Self::default()
        }
    }

    /// Validates every field, returning the dotted path of the first bad one.
    pub fn check(&self) -> std::result::Result<(), (String, String)> {
        let nested = |prefix: &str, r: std::result::Result<(), (&'static str, String)>| {
            r.map_err(|(f, m)| (format!("{prefix}.{f}"), m))
        };
        nested("ssd", self.ssd.check())?;
        nested("refresh", self.refresh.check())?;
        nested("quickshift", self.quickshift.check())?;
        let plain = |field: &str, r: Result<()>| {
            r.map_err(|e| (field.to_string(), e.to_string()))
        };
        plain("weights", self.weights.validate())?;
        plain("extrapolation", self.extrapolation.validate())?;
        if self.patch < 1 {
            return Err(("patch".into(), "must be >= 1".into()));
        }
        if self.kmeans_k < 1 {
            return Err(("kmeans_k".into(), "must be >= 1".into()));
        }
        if self.kmeans_iters < 1 {
            return Err(("kmeans_iters".into(), "must be >= 1".into()));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(("q".into(), format!("must be in (0, 1], got {}", self.q)));
        }
        if self.segment_every < 1 {
            return Err(("segment_every".into(), "must be >= 1".into()));
        }
        if self.extrapolation.depth() > 16 {
            return Err(("extrapolation.order".into(), "must be <= 15".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::param(format!("{field} {msg}")))
    }
}
