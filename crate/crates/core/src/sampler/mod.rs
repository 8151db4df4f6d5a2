//! Denoising loops: the full-grid Euler baseline, the region-adaptive sparse
//! sampler and a patch-based baseline that reuses stale noise predictions.

mod config;
mod ras;
mod scheduler;
mod sdit;

pub use config::{CachedUpdate, Partitioner, QuickshiftConfig, SamplerConfig, Selection};
pub use ras::ras_like_sample;
pub use scheduler::{Scheduler, StepOutcome, StepView};
pub use sdit::{sdit_sample, sdit_sample_observed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid, SigmaSchedule};
use crate::ssd::StepMode;

/// Noise and predicted-clean outputs of one denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub eps: LatentGrid,
    pub x_pred: LatentGrid,
}

impl Evaluation {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            eps: LatentGrid::zeros(height, width, channels)?,
            x_pred: LatentGrid::zeros(height, width, channels)?,
        })
    }
}

/// A noise predictor in the variance-exploding parametrization, where
/// `x_pred = x − σ·ε`.
///
/// `evaluate_masked` writes the outputs for masked pixels only and must give
/// the same values there as an unmasked call.
pub trait Denoiser {
    fn evaluate_masked(&self, x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()>;

    fn evaluate(&self, x: &LatentGrid, sigma: f64) -> Result<Evaluation> {
        let (h, w, c) = x.shape();
        let mut out = Evaluation::zeros(h, w, c)?;
        self.evaluate_masked(x, sigma, &BitMask::full(h, w), &mut out)?;
        Ok(out)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn evaluate_masked(&self, x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()> {
        (**self).evaluate_masked(x, sigma, mask, out)
    }
}

/// `x' = x + (σ_to − σ_from)·ε`.
pub fn euler_step(x: &LatentGrid, eps: &LatentGrid, sigma_from: f64, sigma_to: f64) -> Result<LatentGrid> {
    x.ensure_same_shape(eps, "euler step")?;
    let mut out = x.clone();
    euler_in_place(&mut out, eps, sigma_from, sigma_to);
    Ok(out)
}

pub(crate) fn euler_in_place(x: &mut LatentGrid, eps: &LatentGrid, sigma_from: f64, sigma_to: f64) {
    let ds = sigma_to - sigma_from;
    for (v, e) in x.data_mut().iter_mut().zip(eps.data()) {
        *v += ds * e;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub sigma: f64,
    pub mode: StepMode,
    /// Scheduled sampling ratio `p(t)`.
    pub ratio: f64,
    pub active_pixel_count: usize,
    /// Pixels added to the active set because they had no history.
    pub forced_pixel_count: usize,
    /// Regions in the partition used for planning; 0 on full steps.
    pub region_count: usize,
    /// Relative L2 error of extrapolated predictions on probe pixels.
    pub divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub height: usize,
    pub width: usize,
    pub steps: Vec<StepRecord>,
    pub compute_ratio: f64,
    pub full_steps: usize,
    pub sparse_steps: usize,
}

impl RunReport {
    pub fn from_steps(height: usize, width: usize, steps: Vec<StepRecord>) -> Self {
        let full_steps = steps.iter().filter(|s| s.mode == StepMode::Full).count();
        let sparse_steps = steps.len() - full_steps;
        let mut report = Self {
            height,
            width,
            steps,
            compute_ratio: 0.0,
            full_steps,
            sparse_steps,
        };
        report.compute_ratio = compute_ratio(&report);
        report
    }
}

/// `Σ active_pixel_count / (T·H·W)`.
pub fn compute_ratio(report: &RunReport) -> f64 {
    let n = report.height * report.width;
    if report.steps.is_empty() || n == 0 {
        return 0.0;
    }
    let active: usize = report.steps.iter().map(|s| s.active_pixel_count).sum();
    active as f64 / (report.steps.len() * n) as f64
}

pub(crate) fn check_finite(ev: &Evaluation, mask: &BitMask, step: usize) -> Result<()> {
    for i in mask.indices() {
        if ev.eps.pixel(i).iter().chain(ev.x_pred.pixel(i)).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step,
                detail: format!("denoiser returned a non-finite value at pixel {i}"),
            });
        }
    }
    Ok(())
}

/// Plain Euler over every σ pair with the whole grid evaluated each step.
pub fn full_sample(d: &impl Denoiser, x_t: &LatentGrid, s: &SigmaSchedule) -> Result<(LatentGrid, RunReport)> {
    let (h, w, c) = x_t.shape();
    let sigmas = s.sigmas();
    let full = BitMask::full(h, w);
    let mut ev = Evaluation::zeros(h, w, c)?;
    let mut x = x_t.clone();
    let mut steps = Vec::with_capacity(s.step_count());
    for t in 0..s.step_count() {
        d.evaluate_masked(&x, sigmas[t], &full, &mut ev)?;
        check_finite(&ev, &full, t)?;
        euler_in_place(&mut x, &ev.eps, sigmas[t], sigmas[t + 1]);
        steps.push(StepRecord {
            t,
            sigma: sigmas[t],
            mode: StepMode::Full,
            ratio: 1.0,
            active_pixel_count: h * w,
            forced_pixel_count: 0,
            region_count: 0,
            divergence: None,
        });
    }
    Ok((x, RunReport::from_steps(h, w, steps)))
}
