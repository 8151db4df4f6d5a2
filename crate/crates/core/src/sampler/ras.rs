use super::{check_finite, euler_in_place, Denoiser, Evaluation, RunReport, StepRecord};
use crate::complexity::select_in_order;
use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid, SigmaSchedule};
use crate::partition::uniform_partition;
use crate::ssd::StepMode;

/// Patch baseline: after a full first step, the patches with the largest mean
/// `|ε|` from their last evaluation are re-evaluated up to `ratio·H·W`
/// pixels, and every other patch reuses its stale prediction.
pub fn ras_like_sample(
    d: &impl Denoiser,
    x_t: &LatentGrid,
    s: &SigmaSchedule,
    ratio: f64,
    patch: usize,
) -> Result<(LatentGrid, RunReport)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::param(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let (h, w, c) = x_t.shape();
    let regions = uniform_partition(h, w, patch)?;
    let sizes = regions.region_sizes();
    let members = regions.members();
    let sigmas = s.sigmas();
    let mut cache = Evaluation::zeros(h, w, c)?;
    let mut x = x_t.clone();
    let mut steps = Vec::with_capacity(s.step_count());
    for t in 0..s.step_count() {
        let (mode, active) = if t == 0 || ratio >= 1.0 {
            (StepMode::Full, BitMask::full(h, w))
        } else {
            let scores: Vec<f64> = members
                .iter()
                .map(|px| {
                    let sum: f64 = px.iter().flat_map(|&i| cache.eps.pixel(i)).map(|v| v.abs()).sum();
                    sum / (px.len() * c) as f64
                })
                .collect();
            let mut order: Vec<u32> = (0..scores.len() as u32).collect();
            order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
            let picked = select_in_order(&order, &sizes, h * w, ratio, true);
            (StepMode::Sparse, regions.mask_of(&picked))
        };
        d.evaluate_masked(&x, sigmas[t], &active, &mut cache)?;
        check_finite(&cache, &active, t)?;
        euler_in_place(&mut x, &cache.eps, sigmas[t], sigmas[t + 1]);
        steps.push(StepRecord {
            t,
            sigma: sigmas[t],
            mode,
            ratio: if mode == StepMode::Full { 1.0 } else { ratio },
            active_pixel_count: active.count(),
            forced_pixel_count: 0,
            region_count: if mode == StepMode::Full { 0 } else { regions.region_count() },
            divergence: None,
        });
    }
    Ok((x, RunReport::from_steps(h, w, steps)))
}
