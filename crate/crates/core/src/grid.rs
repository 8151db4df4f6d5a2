//! Grid, mask, region-map and noise-schedule types shared by every stage of
//! the sampler.
//!
//! All grids use a single row-major `(y, x, c)` layout.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H x W x C` field of finite `f64` values in row-major `(y, x, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::param(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::param(format!(
                "grid data length {} does not match {height}x{width}x{channels} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite grid value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a grid from a per-scalar function of `(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Mutable access to the raw values. Callers are responsible for keeping
    /// them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel values of the pixel at linear index `i = y * W + x`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &LatentGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::param(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }
}

/// Aggregate statistics over every scalar of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2_norm: f64,
}

pub fn grid_stats(g: &LatentGrid) -> GridStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for &v in g.data() {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        sq += v * v;
    }
    GridStats {
        min,
        max,
        mean: sum / g.data().len() as f64,
        l2_norm: sq.sqrt(),
    }
}

/// One boolean per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::param(format!(
                "mask length {} does not match {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Linear indices of set pixels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn union_with(&mut self, other: &BitMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn complement(&self) -> BitMask {
        BitMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Dense per-pixel region labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl RegionMap {
    /// Validates already-dense labels.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::param(format!(
                "label length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        let k = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::param(format!("region id {missing} is unused; labels must be dense")));
        }
        Ok(Self {
            height,
            width,
            labels,
            region_count: k,
        })
    }

    /// Relabels arbitrary ids to dense ids in order of first occurrence.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(
        height: usize,
        width: usize,
        raw: &[L],
    ) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::param(format!(
                "label length {} does not match {height}x{width}",
                raw.len()
            )));
        }
        let mut ids: HashMap<L, u32> = HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = ids.len() as u32;
                *ids.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            region_count: ids.len(),
        })
    }

    pub fn single(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
            region_count: 1,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Pixel indices per region, each list ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.region_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn mask_of(&self, ids: &[u32]) -> BitMask {
        let mut wanted = vec![false; self.region_count];
        for &k in ids {
            wanted[k as usize] = true;
        }
        BitMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| wanted[l as usize]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Strictly decreasing noise levels `sigma_0 > ... > sigma_T >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    sigmas: Vec<f64>,
}

impl TryFrom<RawSchedule> for SigmaSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        SigmaSchedule::new(raw.sigmas)
    }
}

impl From<SigmaSchedule> for RawSchedule {
    fn from(s: SigmaSchedule) -> Self {
        RawSchedule { sigmas: s.sigmas }
    }
}

impl SigmaSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Schedule(format!(
                "need at least 2 noise levels, got {}",
                sigmas.len()
            )));
        }
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::Schedule("noise levels must be finite".into()));
        }
        if let Some(w) = sigmas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::Schedule(format!(
                "noise levels must strictly decrease (index {} -> {})",
                w,
                w + 1
            )));
        }
        if *sigmas.last().unwrap() < 0.0 {
            return Err(Error::Schedule("final noise level is negative".into()));
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Number of denoising transitions `T` (one fewer than the number of levels).
    pub fn step_count(&self) -> usize {
        self.sigmas.len() - 1
    }
}

/// Builds a schedule with `steps` noise levels from `sigma_max` down to `sigma_min`.
///
/// Cosine spacing follows `sigma(u) = sigma_min + (sigma_max - sigma_min) * cos^2(pi u / 2)`;
/// both endpoints are pinned exactly.
pub fn make_schedule(
    kind: ScheduleKind,
    sigma_max: f64,
    sigma_min: f64,
    steps: usize,
) -> Result<SigmaSchedule> {
    if steps < 2 {
        return Err(Error::param(format!("schedule needs steps >= 2, got {steps}")));
    }
    if !(sigma_max.is_finite() && sigma_min.is_finite() && sigma_max > sigma_min && sigma_min >= 0.0)
    {
        return Err(Error::param(format!(
            "schedule bounds must satisfy sigma_max > sigma_min >= 0, got {sigma_max}, {sigma_min}"
        )));
    }
    let span = sigma_max - sigma_min;
    let last = steps - 1;
    let sigmas = (0..steps)
        .map(|i| {
            if i == 0 {
                return sigma_max;
            }
            if i == last {
                return sigma_min;
            }
            let u = i as f64 / last as f64;
            match kind {
                ScheduleKind::Linear => sigma_max - span * u,
                ScheduleKind::Cosine => {
                    let c = (PI * u / 2.0).cos();
                    sigma_min + span * c * c
                }
            }
        })
        .collect();
    SigmaSchedule::new(sigmas)
}
