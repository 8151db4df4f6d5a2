//! Per-step sampling ratio (structure / stable / detail phases) and the
//! full-refresh versus sparse decision.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::complexity::{select_in_order, RegionScores};
use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid, RegionMap};
use crate::partition::dilate_mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsdParams {
    pub p_min: f64,
    pub p_max: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for SsdParams {
    fn default() -> Self {
        Self {
            p_min: 0.5,
            p_max: 1.0,
            tau1: 0.1,
            tau2: 0.95,
        }
    }
}

impl SsdParams {
    /// Default phases with `p_min` set to the sampling ratio.
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            p_min: ratio,
            ..Self::default()
        }
    }

    /// Constant ratio at every step.
    pub fn constant(ratio: f64) -> Self {
        Self {
            p_min: ratio,
            p_max: ratio,
            ..Self::default()
        }
    }

    /// Validates and returns the name of the first offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return Err(("p_min", format!("must be in (0, 1], got {}", self.p_min)));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(("p_max", format!("must be in (0, 1], got {}", self.p_max)));
        }
        if self.p_min > self.p_max {
            return Err((
                "p_min",
                format!("must not exceed p_max ({} > {})", self.p_min, self.p_max),
            ));
        }
        if !(self.tau1 >= 0.0 && self.tau1 < self.tau2) {
            return Err(("tau1", format!("must satisfy 0 <= tau1 < tau2, got {}", self.tau1)));
        }
        if self.tau2 > 1.0 {
            return Err(("tau2", format!("must be <= 1, got {}", self.tau2)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::param(format!("ssd.{field} {msg}")))
    }
}

/// `p(t)`: `p_max` before `tau1` and after `tau2`, a half-cosine from `p_max`
/// down to `p_min` in between. The jump back to `p_max` just after `tau2` is
/// intentional.
pub fn ssd_ratio(t: usize, total: usize, p: &SsdParams) -> f64 {
    let u = t as f64 / total.max(1) as f64;
    if u < p.tau1 || u > p.tau2 {
        p.p_max
    } else {
        let phase = (u - p.tau1) / (p.tau2 - p.tau1);
        p.p_min + (p.p_max - p.p_min) / 2.0 * (1.0 + (PI * phase).cos())
    }
}

/// When full-grid refresh steps are inserted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefreshPolicy {
    pub warmup_steps: usize,
    pub cooldown_steps: usize,
    /// Relative L2 error of cached predictions that forces the next step full.
    pub divergence_threshold: f64,
    /// Fraction of the previous step's cached pixels whose extrapolation is
    /// checked against fresh predictions when they are next evaluated.
    pub probe_fraction: f64,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        Self {
            warmup_steps: 2,
            cooldown_steps: 1,
            divergence_threshold: 0.35,
            probe_fraction: 0.05,
        }
    }
}

impl RefreshPolicy {
    /// Only the mandatory first full step; divergence never triggers.
    pub fn disabled() -> Self {
        Self {
            warmup_steps: 1,
            cooldown_steps: 0,
            divergence_threshold: f64::INFINITY,
            probe_fraction: 0.0,
        }
    }

    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.warmup_steps < 1 {
            return Err(("warmup_steps", "must be >= 1; the first step has no history".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err((
                "divergence_threshold",
                format!("must be > 0, got {}", self.divergence_threshold),
            ));
        }
        if !(0.0..=1.0).contains(&self.probe_fraction) {
            return Err((
                "probe_fraction",
                format!("must be in [0, 1], got {}", self.probe_fraction),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::param(format!("refresh.{field} {msg}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Full,
    Sparse,
}

/// What happens at one denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub t: usize,
    pub mode: StepMode,
    pub ratio: f64,
    pub selected: Vec<u32>,
    pub active: BitMask,
    pub active_pixel_count: usize,
}

/// Refresh decision for step `t` of `total`, before any region scoring.
pub fn refresh_mode(
    t: usize,
    total: usize,
    policy: &RefreshPolicy,
    ssd: &SsdParams,
    divergence: Option<f64>,
) -> StepMode {
    let warm = t < policy.warmup_steps;
    let cool = t + policy.cooldown_steps >= total;
    let reset = divergence.is_some_and(|d| d > policy.divergence_threshold);
    if warm || cool || reset || ssd_ratio(t, total, ssd) >= 1.0 {
        StepMode::Full
    } else {
        StepMode::Sparse
    }
}

/// Plans step `t`: full refresh, or the dilated union of the top regions
/// under the pixel budget `p(t)·H·W`.
#[allow(clippy::too_many_arguments)]
pub fn plan_step(
    t: usize,
    total: usize,
    scores: &RegionScores,
    m: &RegionMap,
    policy: &RefreshPolicy,
    ssd: &SsdParams,
    dilation: usize,
    divergence: Option<f64>,
) -> Result<StepPlan> {
    if scores.len() != m.region_count() {
        return Err(Error::param("region scores do not match region map"));
    }
    plan_with_order(t, total, &scores.ranking(), m, policy, ssd, dilation, divergence)
}

/// [`plan_step`] with an explicit region priority order.
#[allow(clippy::too_many_arguments)]
pub fn plan_with_order(
    t: usize,
    total: usize,
    order: &[u32],
    m: &RegionMap,
    policy: &RefreshPolicy,
    ssd: &SsdParams,
    dilation: usize,
    divergence: Option<f64>,
) -> Result<StepPlan> {
    let (h, w) = (m.height(), m.width());
    let ratio = ssd_ratio(t, total, ssd);
    let mode = refresh_mode(t, total, policy, ssd, divergence);
    if mode == StepMode::Full {
        return Ok(full_plan(t, ratio, h, w));
    }
    let sizes = m.region_sizes();
    let selected = select_in_order(order, &sizes, h * w, ratio, true);
    let active = dilate_mask(&m.mask_of(&selected), dilation);
    let active_pixel_count = active.count();
    Ok(StepPlan {
        t,
        mode,
        ratio,
        selected,
        active,
        active_pixel_count,
    })
}

pub(crate) fn full_plan(t: usize, ratio: f64, h: usize, w: usize) -> StepPlan {
    StepPlan {
        t,
        mode: StepMode::Full,
        ratio,
        selected: Vec::new(),
        active: BitMask::full(h, w),
        active_pixel_count: h * w,
    }
}

/// `‖ε̂ − ε‖₂ / (‖ε‖₂ + 1e−12)` over the probed pixels.
pub fn measure_divergence(predicted: &LatentGrid, fresh: &LatentGrid, probe: &BitMask) -> Result<f64> {
    predicted.ensure_same_shape(fresh, "divergence")?;
    if probe.height() != fresh.height() || probe.width() != fresh.width() {
        return Err(Error::param("probe mask does not match grid"));
    }
    if probe.count() == 0 {
        return Err(Error::param("divergence probe mask is empty"));
    }
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in probe.indices() {
        for (a, b) in predicted.pixel(i).iter().zip(fresh.pixel(i)) {
            diff += (a - b) * (a - b);
            norm += b * b;
        }
    }
    Ok(diff.sqrt() / (norm.sqrt() + 1e-12))
}
