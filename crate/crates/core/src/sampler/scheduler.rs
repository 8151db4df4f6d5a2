//! Per-step scheduling state shared by the in-loop sampler and trace replay:
//! segmentation, region ranking, refresh decisions, noise extrapolation for
//! cached pixels, divergence probes and history bookkeeping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_finite, CachedUpdate, Evaluation, Partitioner, SamplerConfig, Selection, StepRecord};
use crate::complexity::{region_scores, score_map_variant, ComplexityMap};
use crate::error::{Error, Result};
use crate::extrapolate::{to_noise, to_velocity, PixelHistory};
use crate::grid::{BitMask, LatentGrid, RegionMap};
use crate::oracle::counter_hash;
use crate::partition::{
    build_feature_field, enforce_min_region_size, estimate_density, kmeans_partition, quickshift_segment,
    uniform_partition,
};
use crate::ssd::{full_plan, plan_with_order, refresh_mode, ssd_ratio, StepMode, StepPlan};

const PROBE_SALT: u64 = 0x5052_4F42_4553_0001;
const ORDER_SALT: u64 = 0x4F52_4445_5253_0002;

/// Result of resolving one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: StepRecord,
    /// Noise used to advance every pixel: fresh where active, extrapolated
    /// (or zero when frozen) elsewhere.
    pub eps_used: LatentGrid,
    /// Relative L2 error of the extrapolation over all cached pixels; only
    /// known when fresh predictions exist everywhere (trace replay).
    pub cached_error: Option<f64>,
}

/// Everything known about a resolved step, handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub t: usize,
    pub sigma: f64,
    pub plan: &'a StepPlan,
    pub regions: Option<&'a RegionMap>,
    pub complexity: Option<&'a ComplexityMap>,
    pub x: &'a LatentGrid,
    pub outcome: &'a StepOutcome,
}

#[derive(Debug, Clone)]
struct Current {
    t: usize,
    plan: StepPlan,
    forced: usize,
    complexity: Option<ComplexityMap>,
    regions_used: bool,
    probe: BitMask,
}

/// Drives the scheduling decisions of a run one step at a time.
///
/// Call [`Scheduler::plan`] with the current latent, evaluate the denoiser on
/// [`Scheduler::active`], then hand the result to [`Scheduler::resolve`].
#[derive(Debug, Clone)]
pub struct Scheduler {
    cfg: SamplerConfig,
    sigmas: Vec<f64>,
    total: usize,
    shape: (usize, usize, usize),
    history: PixelHistory,
    known: Evaluation,
    regions: Option<RegionMap>,
    last_segment: usize,
    pending_divergence: Option<f64>,
    prev_cached: BitMask,
    current: Option<Current>,
    next_t: usize,
}

impl Scheduler {
    /// `sigmas[t]` is the noise level evaluated at step `t`; a trailing
    /// final level may follow. `total` is the number of evaluation steps.
    pub fn new(cfg: &SamplerConfig, sigmas: &[f64], total: usize, shape: (usize, usize, usize)) -> Result<Self> {
        cfg.validate()?;
        if total == 0 || sigmas.len() < total {
            return Err(Error::Schedule(format!(
                "{total} steps need at least {total} sigma levels, got {}",
                sigmas.len()
            )));
        }
        if sigmas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Schedule("sigma levels must be strictly decreasing".into()));
        }
        let (h, w, c) = shape;
        Ok(Self {
            cfg: cfg.clone(),
            sigmas: sigmas.to_vec(),
            total,
            shape,
            history: PixelHistory::new(h, w, c, cfg.extrapolation.depth())?,
            known: Evaluation::zeros(h, w, c)?,
            regions: None,
            last_segment: 0,
            pending_divergence: None,
            prev_cached: BitMask::empty(h, w),
            current: None,
            next_t: 0,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// The `(σ_t, σ_prev)` pair whose difference turns noise at step `t`
    /// into velocity. Step 0 has no predecessor and uses the following gap.
    fn velocity_pair(&self, t: usize) -> (f64, f64) {
        if t == 0 {
            (self.sigmas[1], self.sigmas[0])
        } else {
            (self.sigmas[t], self.sigmas[t - 1])
        }
    }

    fn segment(&self, t: usize) -> Result<RegionMap> {
        let (h, w, _) = self.shape;
        let n = h * w;
        match self.cfg.partitioner {
            Partitioner::Uniform => uniform_partition(h, w, self.cfg.patch),
            Partitioner::Kmeans => {
                let field = build_feature_field(&self.known.x_pred, &self.known.eps, self.cfg.quickshift.spatial_weight)?;
                let seed = counter_hash(self.cfg.seed, t as u64);
                kmeans_partition(&field, self.cfg.kmeans_k.min(n), self.cfg.kmeans_iters, seed)
            }
            Partitioner::Quickshift => {
                if n < 2 {
                    return Ok(RegionMap::single(h, w));
                }
                let field = build_feature_field(&self.known.x_pred, &self.known.eps, self.cfg.quickshift.spatial_weight)?;
                let mut params = self.cfg.quickshift.resolve(&field);
                params.knn = params.knn.min(n - 1);
                let rho = estimate_density(&field, &params)?;
                let m = quickshift_segment(&field, &rho, &params)?;
                enforce_min_region_size(&m, &field, self.cfg.quickshift.min_region_size)
            }
        }
    }

    fn probe_set(&self, t: usize) -> BitMask {
        let (h, w, _) = self.shape;
        let mut probe = BitMask::empty(h, w);
        let frac = self.cfg.refresh.probe_fraction;
        let candidates: Vec<usize> = self.prev_cached.indices().collect();
        if frac <= 0.0 || candidates.is_empty() {
            return probe;
        }
        let take = ((frac * candidates.len() as f64).ceil() as usize).clamp(1, candidates.len());
        let key = |i: usize| counter_hash(self.cfg.seed ^ PROBE_SALT, (t * h * w + i) as u64);
        let mut ranked: Vec<(u64, usize)> = candidates.into_iter().map(|i| (key(i), i)).collect();
        ranked.sort_unstable();
        for &(_, i) in &ranked[..take] {
            probe.set(i, true);
        }
        probe
    }

    /// Decides step `t` given the current latent `x`.
    pub fn plan(&mut self, t: usize, x: &LatentGrid) -> Result<&StepPlan> {
        if t != self.next_t || t >= self.total {
            return Err(Error::param(format!("steps must be planned in order; expected {}, got {t}", self.next_t)));
        }
        if x.shape() != self.shape {
            return Err(Error::param("latent shape does not match the scheduler"));
        }
        let (h, w, _) = self.shape;
        let divergence = self.pending_divergence.take();
        let cfg = &self.cfg;
        let mode = if t == 0 {
            StepMode::Full
        } else {
            refresh_mode(t, self.total, &cfg.refresh, &cfg.ssd, divergence)
        };
        let probe = self.probe_set(t);
        let (plan, forced, complexity, regions_used) = if mode == StepMode::Full {
            (full_plan(t, ssd_ratio(t, self.total, &cfg.ssd), h, w), 0, None, false)
        } else {
            if self.regions.is_none() || t - self.last_segment >= cfg.segment_every {
                self.regions = Some(self.segment(t)?);
                self.last_segment = t;
            }
            let cfg = &self.cfg;
            let regions = self.regions.as_ref().expect("segmented above");
            let cmap = score_map_variant(cfg.scorer, x, &self.known.x_pred, &self.known.eps, &cfg.weights)?;
            let order = match cfg.selection {
                Selection::Complexity => region_scores(&cmap, regions, cfg.q)?.ranking(),
                Selection::Random => {
                    let mut ids: Vec<u32> = (0..regions.region_count() as u32).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(counter_hash(cfg.seed ^ ORDER_SALT, t as u64));
                    ids.shuffle(&mut rng);
                    ids
                }
            };
            let mut plan = plan_with_order(
                t,
                self.total,
                &order,
                regions,
                &cfg.refresh,
                &cfg.ssd,
                cfg.dilation,
                divergence,
            )?;
            let mut forced = 0;
            for i in 0..h * w {
                if !plan.active.at(i) && self.history.len_at(i) == 0 {
                    plan.active.set(i, true);
                    forced += 1;
                }
            }
            plan.active_pixel_count += forced;
            (plan, forced, Some(cmap), true)
        };
        self.current = Some(Current {
            t,
            plan,
            forced,
            complexity,
            regions_used,
            probe,
        });
        Ok(&self.current.as_ref().expect("just set").plan)
    }

    /// Pixels that need fresh predictions at the planned step.
    pub fn active(&self) -> Option<&BitMask> {
        self.current.as_ref().map(|c| &c.plan.active)
    }

    fn extrapolated(&self, t: usize, pixel: usize, out: &mut [f64]) -> Result<()> {
        self.history
            .extrapolate_pixel(pixel, self.sigmas[t], &self.cfg.extrapolation, out)?;
        let (s_t, s_prev) = (self.sigmas[t], self.sigmas[t - 1]);
        for v in out.iter_mut() {
            *v = to_noise(*v, s_t, s_prev);
        }
        Ok(())
    }

    /// Completes the planned step with fresh predictions for the active
    /// pixels. With `fresh_everywhere`, `fresh` also holds true predictions
    /// for cached pixels and the full cached-pixel error is reported.
    pub fn resolve(&mut self, fresh: &Evaluation, fresh_everywhere: bool) -> Result<StepOutcome> {
        let cur = self
            .current
            .take()
            .ok_or_else(|| Error::param("resolve called without a planned step"))?;
        let t = cur.t;
        let (h, w, c) = self.shape;
        if fresh.eps.shape() != self.shape || fresh.x_pred.shape() != self.shape {
            return Err(Error::param("fresh predictions do not match the scheduler shape"));
        }
        let active = &cur.plan.active;
        check_finite(fresh, active, t)?;

        let mut eps_used = fresh.eps.clone();
        let mut scratch = vec![0.0; c];
        let (mut diff, mut norm) = (0.0, 0.0);
        let mut cached_any = false;
        for i in 0..h * w {
            if active.at(i) {
                continue;
            }
            self.extrapolated(t, i, &mut scratch)?;
            if scratch.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    step: t,
                    detail: format!("non-finite extrapolation at pixel {i}"),
                });
            }
            if fresh_everywhere {
                cached_any = true;
                for (a, b) in scratch.iter().zip(fresh.eps.pixel(i)) {
                    diff += (a - b) * (a - b);
                    norm += b * b;
                }
            }
            let dst = eps_used.pixel_mut(i);
            match self.cfg.cached_update {
                CachedUpdate::Extrapolate => dst.copy_from_slice(&scratch),
                CachedUpdate::Freeze => dst.fill(0.0),
            }
        }
        let cached_error = (fresh_everywhere && cached_any).then(|| diff.sqrt() / (norm.sqrt() + 1e-12));

        // Probes: pixels extrapolated last step that are evaluated now.
        let (mut pd, mut pn, mut probed) = (0.0, 0.0, false);
        for i in cur.probe.indices() {
            if !active.at(i) || self.history.len_at(i) == 0 {
                continue;
            }
            self.extrapolated(t, i, &mut scratch)?;
            probed = true;
            for (a, b) in scratch.iter().zip(fresh.eps.pixel(i)) {
                pd += (a - b) * (a - b);
                pn += b * b;
            }
        }
        let divergence = probed.then(|| pd.sqrt() / (pn.sqrt() + 1e-12));
        // A full step has already refreshed everything, so only sparse-step
        // probes can trigger the next reset.
        if cur.plan.mode == StepMode::Sparse {
            self.pending_divergence = divergence;
        }

        for i in active.indices() {
            self.known.eps.pixel_mut(i).copy_from_slice(fresh.eps.pixel(i));
            self.known.x_pred.pixel_mut(i).copy_from_slice(fresh.x_pred.pixel(i));
        }
        if t + 1 < self.total {
            let (s_t, s_prev) = self.velocity_pair(t);
            let mut v = fresh.eps.clone();
            for val in v.data_mut() {
                *val = to_velocity(*val, s_t, s_prev)?;
            }
            self.history.push(self.sigmas[t], &v, active)?;
        }
        self.prev_cached = active.complement();

        let record = StepRecord {
            t,
            sigma: self.sigmas[t],
            mode: cur.plan.mode,
            ratio: cur.plan.ratio,
            active_pixel_count: cur.plan.active_pixel_count,
            forced_pixel_count: cur.forced,
            region_count: if cur.regions_used {
                self.regions.as_ref().map_or(0, |r| r.region_count())
            } else {
                0
            },
            divergence,
        };
        self.next_t = t + 1;
        self.current = Some(cur);
        Ok(StepOutcome {
            record,
            eps_used,
            cached_error,
        })
    }

    /// View of the most recently resolved step.
    pub fn view<'a>(&'a self, x: &'a LatentGrid, outcome: &'a StepOutcome) -> Option<StepView<'a>> {
        let cur = self.current.as_ref()?;
        Some(StepView {
            t: cur.t,
            sigma: self.sigmas[cur.t],
            plan: &cur.plan,
            regions: if cur.regions_used { self.regions.as_ref() } else { None },
            complexity: cur.complexity.as_ref(),
            x,
            outcome,
        })
    }
}
