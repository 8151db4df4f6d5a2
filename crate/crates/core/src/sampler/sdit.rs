use super::scheduler::{Scheduler, StepView};
use super::{euler_in_place, Denoiser, Evaluation, RunReport, SamplerConfig};
use crate::error::Result;
use crate::grid::{LatentGrid, SigmaSchedule};

/// Region-adaptive sampling: active regions get fresh predictions, every
/// other pixel steps with an extrapolated one.
pub fn sdit_sample(
    d: &impl Denoiser,
    x_t: &LatentGrid,
    s: &SigmaSchedule,
    cfg: &SamplerConfig,
) -> Result<(LatentGrid, RunReport)> {
    sdit_sample_observed(d, x_t, s, cfg, |_| Ok(()))
}

/// [`sdit_sample`] calling `observe` after every step, before the latent is
/// advanced.
pub fn sdit_sample_observed(
    d: &impl Denoiser,
    x_t: &LatentGrid,
    s: &SigmaSchedule,
    cfg: &SamplerConfig,
    mut observe: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<(LatentGrid, RunReport)> {
    let (h, w, c) = x_t.shape();
    let sigmas = s.sigmas();
    let total = s.step_count();
    let mut sched = Scheduler::new(cfg, sigmas, total, x_t.shape())?;
    let mut fresh = Evaluation::zeros(h, w, c)?;
    let mut x = x_t.clone();
    let mut steps = Vec::with_capacity(total);
    for t in 0..total {
        sched.plan(t, &x)?;
        let active = sched.active().expect("planned").clone();
        d.evaluate_masked(&x, sigmas[t], &active, &mut fresh)?;
        let outcome = sched.resolve(&fresh, false)?;
        if let Some(view) = sched.view(&x, &outcome) {
            observe(&view)?;
        }
        euler_in_place(&mut x, &outcome.eps_used, sigmas[t], sigmas[t + 1]);
        steps.push(outcome.record);
    }
    Ok((x, RunReport::from_steps(h, w, steps)))
}
