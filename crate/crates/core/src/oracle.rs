//! Synthetic scenes, forward noising and closed-form denoisers.
//!
//! Every denoiser here is a pure per-pixel map, so masked evaluation gives the
//! same values as a full-grid call.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid};
use crate::sampler::{Denoiser, Evaluation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    LinearGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub shape_count: usize,
    pub texture_band: bool,
    pub background: Background,
    pub value_range: [f64; 2],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 1,
            shape_count: 4,
            texture_band: true,
            background: Background::Flat,
            value_range: [0.0, 1.0],
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.height < 4 {
            return Err(("height", format!("must be >= 4, got {}", self.height)));
        }
        if self.width < 4 {
            return Err(("width", format!("must be >= 4, got {}", self.width)));
        }
        if self.channels == 0 {
            return Err(("channels", "must be >= 1".into()));
        }
        let [lo, hi] = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(("value_range", format!("must be finite with lo < hi, got [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::param(format!("scene.{field} {msg}")))
    }
}

/// Background, then `shape_count` rectangles or ellipses with constant values,
/// then (optionally) a band of one-pixel stripes.
pub fn make_scene(spec: &SceneSpec) -> Result<LatentGrid> {
    spec.validate()?;
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let [lo, hi] = spec.value_range;
    let span = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let v = match spec.background {
                Background::Flat => lo + 0.5 * span,
                Background::LinearGradient => lo + span * (0.25 + 0.5 * x as f64 / (w - 1) as f64),
            };
            data[(y * w + x) * c..(y * w + x + 1) * c].fill(v);
        }
    }
    for _ in 0..spec.shape_count {
        let sh = rng.gen_range(h / 6..=h / 2).max(2);
        let sw = rng.gen_range(w / 6..=w / 2).max(2);
        let y0 = rng.gen_range(0..=h - sh);
        let x0 = rng.gen_range(0..=w - sw);
        let ellipse = rng.gen_bool(0.5);
        let value: Vec<f64> = (0..c).map(|_| lo + span * rng.gen_range(0.05..0.95)).collect();
        let (cy, cx) = (y0 as f64 + (sh as f64 - 1.0) / 2.0, x0 as f64 + (sw as f64 - 1.0) / 2.0);
        let (ry, rx) = (sh as f64 / 2.0, sw as f64 / 2.0);
        for y in y0..y0 + sh {
            for x in x0..x0 + sw {
                let inside = !ellipse || {
                    let dy = (y as f64 - cy) / ry;
                    let dx = (x as f64 - cx) / rx;
                    dy * dy + dx * dx <= 1.0
                };
                if inside {
                    data[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&value);
                }
            }
        }
    }
    if spec.texture_band {
        let bh = (h / 6).max(2);
        let y0 = rng.gen_range(0..=h - bh);
        let amp = 0.3 * span;
        for y in y0..y0 + bh {
            for x in 0..w {
                let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = lo + 0.5 * span + sign * amp;
                }
            }
        }
    }
    LatentGrid::new(h, w, c, data)
}

/// Separable Gaussian blur with replicated borders; used for the smooth
/// variant of a scene.
pub fn gaussian_blur(g: &LatentGrid, sigma: f64) -> Result<LatentGrid> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("blur sigma must be > 0, got {sigma}")));
    }
    let (h, w, c) = g.shape();
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * g.get(y, clamp(x as isize + k as isize - radius, w), ch))
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[(clamp(y as isize + k as isize - radius, h) * w + x) * c + ch])
                    .sum();
            }
        }
    }
    LatentGrid::new(h, w, c, out)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit value for `(seed, counter)`.
pub fn counter_hash(seed: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ counter.wrapping_mul(GOLDEN))
}

/// Uniform in `(0, 1]` from the top 53 bits.
fn unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 / (1u64 << 53) as f64
}

/// Standard normal variate number `index` of the stream `seed` (Box–Muller).
pub fn normal_at(seed: u64, index: u64) -> f64 {
    let u1 = unit(counter_hash(seed, 2 * index));
    let u2 = unit(counter_hash(seed, 2 * index + 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `x₀ + σ·z` with `z` drawn per scalar from the counter-based stream.
pub fn forward_noise(x0: &LatentGrid, sigma: f64, seed: u64) -> Result<LatentGrid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let (h, w, c) = x0.shape();
    let data = x0
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| v + sigma * normal_at(seed, k as u64))
        .collect();
    LatentGrid::new(h, w, c, data)
}

fn check_eval_shapes(x: &LatentGrid, mask: &BitMask, out: &Evaluation, shape: (usize, usize, usize)) -> Result<()> {
    if x.shape() != shape
        || out.eps.shape() != shape
        || out.x_pred.shape() != shape
        || mask.height() != shape.0
        || mask.width() != shape.1
    {
        return Err(Error::param("denoiser input shape does not match its target"));
    }
    Ok(())
}

/// Applies `f(pixel, x, eps, x_pred)` to every masked pixel in parallel.
fn for_masked(
    x: &LatentGrid,
    mask: &BitMask,
    out: &mut Evaluation,
    f: impl Fn(usize, &[f64], &mut [f64], &mut [f64]) + Sync,
) {
    let c = x.channels();
    let Evaluation { eps, x_pred } = out;
    eps.data_mut()
        .par_chunks_mut(c)
        .zip(x_pred.data_mut().par_chunks_mut(c))
        .enumerate()
        .filter(|(i, _)| mask.at(*i))
        .for_each(|(i, (e, p))| f(i, x.pixel(i), e, p));
}

/// Knows the clean target exactly: `x_pred = target`, `ε = (x − target)/σ`.
#[derive(Debug, Clone)]
pub struct DeltaDenoiser {
    target: LatentGrid,
}

pub fn delta_denoiser(target: LatentGrid) -> DeltaDenoiser {
    DeltaDenoiser { target }
}

impl Denoiser for DeltaDenoiser {
    fn evaluate_masked(&self, x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()> {
        check_eval_shapes(x, mask, out, self.target.shape())?;
        for_masked(x, mask, out, |i, xs, e, p| {
            for ((e, p), (&xv, &tv)) in e.iter_mut().zip(p.iter_mut()).zip(xs.iter().zip(self.target.pixel(i))) {
                *p = tv;
                *e = if sigma == 0.0 { 0.0 } else { (xv - tv) / sigma };
            }
        });
        Ok(())
    }
}

/// Per-pixel Gaussian mixture prior: component `k` has mean field `means[k]`,
/// isotropic std `stds[k]` and weight `weights[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPixelPrior {
    means: Vec<LatentGrid>,
    stds: Vec<f64>,
    weights: Vec<f64>,
}

impl GmmPixelPrior {
    pub fn new(means: Vec<LatentGrid>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != stds.len() || means.len() != weights.len() {
            return Err(Error::param("mixture needs matching non-empty means, stds and weights"));
        }
        if means.iter().any(|m| !m.same_shape(&means[0])) {
            return Err(Error::param("component mean fields differ in shape"));
        }
        if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::param("component stds must be > 0"));
        }
        if weights.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::param("mixture weights must be > 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights must sum to 1, got {total}")));
        }
        Ok(Self { means, stds, weights })
    }

    /// Two equally weighted components centred on a sharp and a smooth scene.
    pub fn sharp_smooth(sharp: &LatentGrid, smooth: &LatentGrid, std: f64) -> Result<Self> {
        Self::new(vec![sharp.clone(), smooth.clone()], vec![std; 2], vec![0.5, 0.5])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.means[0].shape()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    /// Posterior mean `E[x₀ | x]` for one pixel.
    pub fn posterior_mean(&self, pixel: usize, x: &[f64], sigma: f64, out: &mut [f64]) {
        if sigma == 0.0 {
            out.copy_from_slice(x);
            return;
        }
        let c = x.len() as f64;
        let k = self.means.len();
        let mut logw = [0.0f64; 8];
        let mut logw_vec;
        let lw: &mut [f64] = if k <= 8 {
            &mut logw[..k]
        } else {
            logw_vec = vec![0.0; k];
            &mut logw_vec
        };
        for (j, slot) in lw.iter_mut().enumerate() {
            let var = sigma * sigma + self.stds[j] * self.stds[j];
            let d2: f64 = x
                .iter()
                .zip(self.means[j].pixel(pixel))
                .map(|(a, m)| (a - m) * (a - m))
                .sum();
            *slot = self.weights[j].ln() - 0.5 * c * var.ln() - d2 / (2.0 * var);
        }
        let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        for v in lw.iter_mut() {
            *v = (*v - top).exp();
            norm += *v;
        }
        out.fill(0.0);
        for (j, &wt) in lw.iter().enumerate() {
            let s2 = self.stds[j] * self.stds[j];
            let shrink = s2 / (s2 + sigma * sigma);
            for ((o, &xv), &m) in out.iter_mut().zip(x).zip(self.means[j].pixel(pixel)) {
                *o += wt / norm * (m + shrink * (xv - m));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    prior: GmmPixelPrior,
}

pub fn gmm_denoiser(prior: GmmPixelPrior) -> GmmDenoiser {
    GmmDenoiser { prior }
}

impl GmmDenoiser {
    pub fn prior(&self) -> &GmmPixelPrior {
        &self.prior
    }
}

impl Denoiser for GmmDenoiser {
    fn evaluate_masked(&self, x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()> {
        check_eval_shapes(x, mask, out, self.prior.shape())?;
        for_masked(x, mask, out, |i, xs, e, p| {
            self.prior.posterior_mean(i, xs, sigma, p);
            for ((e, &pv), &xv) in e.iter_mut().zip(p.iter()).zip(xs) {
                *e = if sigma == 0.0 { 0.0 } else { (xv - pv) / sigma };
            }
        });
        Ok(())
    }
}

/// A noisy starting latent together with the mixture denoiser built from its
/// scene, ready for sampling.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub scene: LatentGrid,
    pub smooth: LatentGrid,
    pub denoiser: GmmDenoiser,
    pub x_t: LatentGrid,
}

/// Scene from `spec`, a blurred copy (σ = 1.5) as the second mixture
/// component with `component_std`, and `x_T = scene + sigma_max·z`.
pub fn oracle_case(spec: &SceneSpec, sigma_max: f64, component_std: f64, noise_seed: u64) -> Result<OracleCase> {
    let scene = make_scene(spec)?;
    let smooth = gaussian_blur(&scene, 1.5)?;
    let denoiser = gmm_denoiser(GmmPixelPrior::sharp_smooth(&scene, &smooth, component_std)?);
    let x_t = forward_noise(&scene, sigma_max, noise_seed)?;
    Ok(OracleCase {
        scene,
        smooth,
        denoiser,
        x_t,
    })
}
