//! Per-pixel denoising-difficulty scores, top-q% region aggregation and
//! budgeted region selection.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, RegionMap};

/// Weights of the edge, fine-detail and residual-noise terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexityWeights {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for ComplexityWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 0.5,
            beta: 1.0,
        }
    }
}

impl ComplexityWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.gamma, self.beta];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("complexity weights must be finite and >= 0"));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::param("at least one complexity weight must be > 0"));
        }
        Ok(())
    }
}

/// Nonnegative score per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl ComplexityMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::param("score length does not match grid"));
        }
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::param("complexity scores must be finite and >= 0"));
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Central difference inside, one-sided at the borders, zero on a length-1 axis.
#[inline]
fn derivative(at: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(i + 1) - at(i - 1)) / 2.0
    }
}

/// `C_i = (1/C) Σ_c [α·|∇x_pred| + γ·|Δx_pred| + β·|x_t − x_pred|]`.
pub fn complexity_map(
    x_t: &LatentGrid,
    x_pred: &LatentGrid,
    w: &ComplexityWeights,
) -> Result<ComplexityMap> {
    x_t.ensure_same_shape(x_pred, "complexity map")?;
    w.validate()?;
    let (h, wd, c) = x_pred.shape();
    let mut scores = Vec::with_capacity(h * wd);
    for y in 0..h {
        for x in 0..wd {
            let mut acc = 0.0;
            for ch in 0..c {
                let v = |yy: usize, xx: usize| x_pred.get(yy, xx, ch);
                let center = v(y, x);
                let mut term = 0.0;
                if w.alpha != 0.0 {
                    let dx = derivative(|xx| v(y, xx), x, wd);
                    let dy = derivative(|yy| v(yy, x), y, h);
                    term += w.alpha * (dx * dx + dy * dy).sqrt();
                }
                if w.gamma != 0.0 {
                    // Replicate padding: out-of-range neighbours repeat the edge pixel.
                    let left = v(y, x.saturating_sub(1));
                    let right = v(y, (x + 1).min(wd - 1));
                    let up = v(y.saturating_sub(1), x);
                    let down = v((y + 1).min(h - 1), x);
                    term += w.gamma * (left + right + up + down - 4.0 * center).abs();
                }
                if w.beta != 0.0 {
                    term += w.beta * (x_t.get(y, x, ch) - center).abs();
                }
                acc += term;
            }
            scores.push(acc / c as f64);
        }
    }
    ComplexityMap::new(h, wd, scores)
}

/// Scoring rules compared in the complexity ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    Ours,
    L2Norm,
    NoiseAmplitude,
    Stddev,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 4] = [
        ScoreVariant::Ours,
        ScoreVariant::L2Norm,
        ScoreVariant::NoiseAmplitude,
        ScoreVariant::Stddev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Ours => "ours",
            ScoreVariant::L2Norm => "l2_norm",
            ScoreVariant::NoiseAmplitude => "noise_amplitude",
            ScoreVariant::Stddev => "stddev",
        }
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown score variant `{s}`")))
    }
}

pub fn score_map_variant(
    variant: ScoreVariant,
    x_t: &LatentGrid,
    x_pred: &LatentGrid,
    eps: &LatentGrid,
    w: &ComplexityWeights,
) -> Result<ComplexityMap> {
    x_t.ensure_same_shape(x_pred, "score variant")?;
    x_t.ensure_same_shape(eps, "score variant")?;
    let (h, wd, c) = x_pred.shape();
    let n = h * wd;
    let scores: Vec<f64> = match variant {
        ScoreVariant::Ours => return complexity_map(x_t, x_pred, w),
        ScoreVariant::L2Norm => (0..n)
            .map(|i| x_pred.pixel(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
        ScoreVariant::NoiseAmplitude => (0..n)
            .map(|i| eps.pixel(i).iter().map(|v| v.abs()).sum::<f64>() / c as f64)
            .collect(),
        ScoreVariant::Stddev => (0..n)
            .map(|i| {
                let (y, x) = (i / wd, i % wd);
                let mut total = 0.0;
                for ch in 0..c {
                    let mut vals = Vec::with_capacity(9);
                    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(wd - 1) {
                            vals.push(x_pred.get(yy, xx, ch));
                        }
                    }
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
                    total += var.sqrt();
                }
                total / c as f64
            })
            .collect(),
    };
    ComplexityMap::new(h, wd, scores)
}

/// Top-q% mean score and size of each region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionScores {
    pub scores: Vec<f64>,
    pub pixel_counts: Vec<usize>,
}

impl RegionScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Region ids ordered by score, highest first; ties go to the lower id.
    pub fn ranking(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.scores.len() as u32).collect();
        ids.sort_by(|&a, &b| {
            self.scores[b as usize]
                .total_cmp(&self.scores[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }
}

/// Mean of the `max(1, ⌈q·|M_k|⌉)` highest scores in each region.
pub fn region_scores(c: &ComplexityMap, m: &RegionMap, q: f64) -> Result<RegionScores> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param(format!("q must be in (0, 1], got {q}")));
    }
    if c.height() != m.height() || c.width() != m.width() {
        return Err(Error::param("complexity map and region map shapes differ"));
    }
    let mut per_region: Vec<Vec<f64>> = vec![Vec::new(); m.region_count()];
    for (i, &s) in c.scores().iter().enumerate() {
        per_region[m.label(i) as usize].push(s);
    }
    let mut scores = Vec::with_capacity(per_region.len());
    let mut pixel_counts = Vec::with_capacity(per_region.len());
    for mut vals in per_region {
        let n = vals.len();
        let take = ((q * n as f64).ceil() as usize).clamp(1, n);
        vals.sort_unstable_by(|a, b| b.total_cmp(a));
        scores.push(vals[..take].iter().sum::<f64>() / take as f64);
        pixel_counts.push(n);
    }
    Ok(RegionScores {
        scores,
        pixel_counts,
    })
}

/// Walks `order` adding regions while the running pixel total stays within
/// `p·H·W`. With `guarantee_top` the first region is always taken.
pub fn select_in_order(
    order: &[u32],
    pixel_counts: &[usize],
    total_pixels: usize,
    p: f64,
    guarantee_top: bool,
) -> Vec<u32> {
    if p >= 1.0 {
        return order.to_vec();
    }
    let budget = p * total_pixels as f64;
    let mut used = 0usize;
    let mut out = Vec::new();
    for &id in order {
        let next = used + pixel_counts[id as usize];
        if next as f64 <= budget || (out.is_empty() && guarantee_top) {
            used = next;
            out.push(id);
        } else {
            break;
        }
    }
    out
}

/// Highest-scoring regions that fit a pixel budget of `p·H·W`, always at
/// least the top region.
pub fn select_regions(s: &RegionScores, m: &RegionMap, p: f64) -> Result<Vec<u32>> {
    select_regions_with(s, m, p, true)
}

pub fn select_regions_with(
    s: &RegionScores,
    m: &RegionMap,
    p: f64,
    guarantee_top: bool,
) -> Result<Vec<u32>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param(format!("p must be in (0, 1], got {p}")));
    }
    if s.len() != m.region_count() {
        return Err(Error::param("region scores do not match region map"));
    }
    Ok(select_in_order(
        &s.ranking(),
        &s.pixel_counts,
        m.height() * m.width(),
        p,
        guarantee_top,
    ))
}
