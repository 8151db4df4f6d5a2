//! Velocity-space extrapolation of noise predictions for cached pixels.
//!
//! Noise predictions are rescaled by the preceding step size into velocities,
//! interpolated against σ with a Newton divided-difference polynomial whose
//! higher-order terms are damped by `exp(−λ·|σ_t − σ_{t−k}|)`, evaluated at
//! the next σ and scaled back into noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtrapolationParams {
    /// Highest divided-difference level used.
    pub order: usize,
    /// Decay rate per unit σ applied to higher-order terms.
    pub lambda: f64,
}

impl Default for ExtrapolationParams {
    fn default() -> Self {
        Self {
            order: 2,
            lambda: 0.5,
        }
    }
}

impl ExtrapolationParams {
    /// History depth needed for the configured order.
    pub fn depth(&self) -> usize {
        self.order + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `v = ε / (σ_t − σ_prev)`.
pub fn to_velocity(eps: f64, sigma_t: f64, sigma_prev: f64) -> Result<f64> {
    let delta = sigma_t - sigma_prev;
    if delta == 0.0 {
        return Err(Error::Schedule(format!(
            "zero step size at sigma {sigma_t}; cannot form a velocity"
        )));
    }
    Ok(eps / delta)
}

/// `ε̂ = v · (σ_next − σ_t)`.
pub fn to_noise(v: f64, sigma_next: f64, sigma_t: f64) -> f64 {
    v * (sigma_next - sigma_t)
}

/// Triangular table where `level(k)[i] = v[σ_i, …, σ_{i+k}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DividedDifferences {
    levels: Vec<Vec<f64>>,
}

impl DividedDifferences {
    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn order(&self) -> usize {
        self.levels.len() - 1
    }

    /// Newton coefficients `v[σ_0], v[σ_0, σ_1], …` for the node order given.
    pub fn coefficients(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l[0]).collect()
    }
}

pub fn divided_differences(nodes: &[(f64, f64)]) -> Result<DividedDifferences> {
    if nodes.is_empty() {
        return Err(Error::param("divided differences need at least one node"));
    }
    for (i, a) in nodes.iter().enumerate() {
        if nodes[i + 1..].iter().any(|b| b.0 == a.0) {
            return Err(Error::param(format!("duplicate sigma node {}", a.0)));
        }
    }
    let mut levels = vec![nodes.iter().map(|n| n.1).collect::<Vec<f64>>()];
    for k in 1..nodes.len() {
        let prev = &levels[k - 1];
        let next = (0..nodes.len() - k)
            .map(|i| (prev[i + 1] - prev[i]) / (nodes[i + k].0 - nodes[i].0))
            .collect();
        levels.push(next);
    }
    Ok(DividedDifferences { levels })
}

/// Decayed Newton extrapolation over one scalar history.
///
/// `sigmas` and `values` are in evaluation order (oldest first). The Newton
/// form is built from the most recent node backwards, so
/// `v̂ = Σ_k w_k · α_k(σ_next) · v[σ_t, …, σ_{t−k}]` with
/// `α_k = Π_{j<k} (σ_next − σ_{t−j})`.
pub fn newton_extrapolate(
    sigmas: &[f64],
    values: &[f64],
    sigma_next: f64,
    p: &ExtrapolationParams,
) -> Result<f64> {
    if sigmas.is_empty() || sigmas.len() != values.len() {
        return Err(Error::NoHistory);
    }
    let n = p.order.min(sigmas.len() - 1);
    let mut rs = [0.0; MAX_NODES];
    let mut rv = [0.0; MAX_NODES];
    let used = recent_first(sigmas, n + 1, &mut rs);
    recent_first(values, n + 1, &mut rv);
    let mut basis = [0.0; MAX_NODES];
    newton_basis(&rs[..used], sigma_next, p.lambda, &mut basis);
    let mut coeff = [0.0; MAX_NODES];
    Ok(newton_sum(&rs[..used], &rv[..used], &basis[..used], &mut coeff))
}

const MAX_NODES: usize = 16;

fn recent_first(src: &[f64], count: usize, dst: &mut [f64; MAX_NODES]) -> usize {
    let count = count.min(MAX_NODES).min(src.len());
    for (k, slot) in dst.iter_mut().take(count).enumerate() {
        *slot = src[src.len() - 1 - k];
    }
    count
}

/// `basis[k] = w_k · α_k(σ_next)` for nodes in most-recent-first order.
fn newton_basis(nodes: &[f64], sigma_next: f64, lambda: f64, basis: &mut [f64]) {
    let mut alpha = 1.0;
    for k in 0..nodes.len() {
        let w = (-lambda * (nodes[0] - nodes[k]).abs()).exp();
        basis[k] = w * alpha;
        alpha *= sigma_next - nodes[k];
    }
}

/// In-place divided differences over most-recent-first nodes, dotted with the basis.
fn newton_sum(nodes: &[f64], values: &[f64], basis: &[f64], coeff: &mut [f64]) -> f64 {
    let n = nodes.len();
    coeff[..n].copy_from_slice(values);
    for j in 1..n {
        for i in (j..n).rev() {
            coeff[i] = (coeff[i] - coeff[i - 1]) / (nodes[i] - nodes[i - j]);
        }
    }
    (0..n).map(|k| basis[k] * coeff[k]).sum()
}

/// Per-pixel ring buffers of `(σ, velocity)` samples, shared σ across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelHistory {
    height: usize,
    width: usize,
    channels: usize,
    depth: usize,
    lens: Vec<usize>,
    sigmas: Vec<f64>,
    values: Vec<f64>,
}

impl PixelHistory {
    pub fn new(height: usize, width: usize, channels: usize, depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_NODES {
            return Err(Error::param(format!("history depth must be in [1, {MAX_NODES}]")));
        }
        let n = height * width;
        Ok(Self {
            height,
            width,
            channels,
            depth,
            lens: vec![0; n],
            sigmas: vec![0.0; n * depth],
            values: vec![0.0; n * depth * channels],
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len_at(&self, pixel: usize) -> usize {
        self.lens[pixel]
    }

    /// Stored σ values of a pixel, oldest first.
    pub fn sigmas_at(&self, pixel: usize) -> &[f64] {
        let base = pixel * self.depth;
        &self.sigmas[base..base + self.lens[pixel]]
    }

    /// Stored velocities of one pixel-channel, oldest first.
    pub fn values_at(&self, pixel: usize, channel: usize) -> Vec<f64> {
        let base = (pixel * self.channels + channel) * self.depth;
        self.values[base..base + self.lens[pixel]].to_vec()
    }

    /// Pixels that have at least one sample.
    pub fn populated(&self) -> BitMask {
        BitMask::from_bits(self.height, self.width, self.lens.iter().map(|&l| l > 0).collect())
            .expect("dimensions match")
    }

    /// Appends `(σ, v)` for every masked pixel, evicting the oldest sample past
    /// the configured depth.
    pub fn push(&mut self, sigma: f64, v: &LatentGrid, mask: &BitMask) -> Result<()> {
        if v.shape() != (self.height, self.width, self.channels)
            || mask.height() != self.height
            || mask.width() != self.width
        {
            return Err(Error::param("history push shape mismatch"));
        }
        for i in mask.indices() {
            let len = self.lens[i];
            if len > 0 {
                let newest = self.sigmas[i * self.depth + len - 1];
                if sigma >= newest {
                    return Err(Error::Ordering {
                        pixel: i,
                        sigma,
                        newest,
                    });
                }
            }
        }
        let (d, c) = (self.depth, self.channels);
        for i in mask.indices() {
            let len = self.lens[i];
            let slot = if len == d {
                self.sigmas.copy_within(i * d + 1..(i + 1) * d, i * d);
                for ch in 0..c {
                    let base = (i * c + ch) * d;
                    self.values.copy_within(base + 1..base + d, base);
                }
                d - 1
            } else {
                self.lens[i] = len + 1;
                len
            };
            self.sigmas[i * d + slot] = sigma;
            for (ch, &val) in v.pixel(i).iter().enumerate() {
                self.values[(i * c + ch) * d + slot] = val;
            }
        }
        Ok(())
    }

    /// Extrapolated velocity at `sigma_next` for every channel of `pixel`.
    pub fn extrapolate_pixel(
        &self,
        pixel: usize,
        sigma_next: f64,
        p: &ExtrapolationParams,
        out: &mut [f64],
    ) -> Result<()> {
        let len = self.lens[pixel];
        if len == 0 {
            return Err(Error::NoHistory);
        }
        let used = p.order.min(len - 1) + 1;
        let d = self.depth;
        let mut nodes = [0.0; MAX_NODES];
        for (k, node) in nodes.iter_mut().take(used).enumerate() {
            *node = self.sigmas[pixel * d + len - 1 - k];
        }
        let mut basis = [0.0; MAX_NODES];
        newton_basis(&nodes[..used], sigma_next, p.lambda, &mut basis);
        let mut vals = [0.0; MAX_NODES];
        let mut coeff = [0.0; MAX_NODES];
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let base = (pixel * self.channels + ch) * d;
            for (k, v) in vals.iter_mut().take(used).enumerate() {
                *v = self.values[base + len - 1 - k];
            }
            *o = newton_sum(&nodes[..used], &vals[..used], &basis[..used], &mut coeff);
        }
        Ok(())
    }
}

/// Functional form of [`PixelHistory::push`].
pub fn push_history(h: &PixelHistory, sigma: f64, v: &LatentGrid, mask: &BitMask) -> Result<PixelHistory> {
    let mut out = h.clone();
    out.push(sigma, v, mask)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(order: usize) -> ExtrapolationParams {
        ExtrapolationParams { order, lambda: 0.0 }
    }

    #[test]
    fn velocity_examples() {
        assert!((to_velocity(0.5, 0.6, 0.8).unwrap() + 2.5).abs() < 1e-12);
        assert_eq!(to_velocity(0.0, 0.6, 0.8).unwrap(), 0.0);
        assert!(to_velocity(1.0, 0.5, 0.5).is_err());
        assert!((to_noise(-2.5, 0.4, 0.6) - 0.5).abs() < 1e-12);
        assert_eq!(to_noise(3.7, 0.4, 0.4), 0.0);
    }

    #[test]
    fn round_trip_with_equal_steps() {
        let eps = 0.8137;
        let v = to_velocity(eps, 0.75, 1.0).unwrap();
        assert_eq!(to_noise(v, 0.5, 0.75), eps);
    }

    #[test]
    fn composition_rescales_by_step_ratio() {
        let eps = 0.3;
        let (s0, s1, s2) = (1.0, 0.7, 0.55);
        let back = to_noise(to_velocity(eps, s1, s0).unwrap(), s2, s1);
        assert!((back - eps * (s2 - s1) / (s1 - s0)).abs() < 1e-15);
    }

    #[test]
    fn divided_difference_table() {
        let dd = divided_differences(&[(1.0, 1.0), (0.8, 0.64), (0.6, 0.36)]).unwrap();
        assert!((dd.level(1)[0] - 1.8).abs() < 1e-12);
        assert!((dd.level(1)[1] - 1.4).abs() < 1e-12);
        assert!((dd.level(2)[0] - 1.0).abs() < 1e-12);

        let single = divided_differences(&[(0.3, 2.0)]).unwrap();
        assert_eq!(single.coefficients(), vec![2.0]);

        let flat = divided_differences(&[(1.0, 4.0), (0.5, 4.0), (0.2, 4.0), (0.1, 4.0)]).unwrap();
        assert!(flat.coefficients()[1..].iter().all(|&c| c == 0.0));

        assert!(divided_differences(&[(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(divided_differences(&[]).is_err());
    }

    #[test]
    fn quadratic_example() {
        let v = newton_extrapolate(&[1.0, 0.8, 0.6], &[1.0, 0.64, 0.36], 0.4, &exact(2)).unwrap();
        assert!((v - 0.16).abs() < 1e-12);
    }

    #[test]
    fn single_and_constant_histories() {
        let p = ExtrapolationParams { order: 2, lambda: 3.0 };
        assert_eq!(newton_extrapolate(&[0.5], &[1.25], 0.1, &p).unwrap(), 1.25);
        let c = newton_extrapolate(&[0.9, 0.7, 0.4], &[2.0, 2.0, 2.0], 0.05, &p).unwrap();
        assert_eq!(c, 2.0);
        assert!(matches!(newton_extrapolate(&[], &[], 0.1, &p), Err(Error::NoHistory)));
    }

    #[test]
    fn large_decay_holds_last_value() {
        let p = ExtrapolationParams { order: 2, lambda: 1e6 };
        let v = newton_extrapolate(&[1.0, 0.8, 0.6], &[1.0, 0.64, 0.36], 0.4, &p).unwrap();
        assert!((v - 0.36).abs() < 1e-12);
    }

    #[test]
    fn history_push_and_evict() {
        let mut h = PixelHistory::new(2, 2, 1, 3).unwrap();
        let full = BitMask::full(2, 2);
        for (k, s) in [1.0, 0.8, 0.6, 0.4].iter().enumerate() {
            let v = LatentGrid::filled(2, 2, 1, k as f64).unwrap();
            h.push(*s, &v, &full).unwrap();
            if k == 0 {
                assert!((0..4).all(|i| h.len_at(i) == 1));
            }
        }
        assert_eq!(h.sigmas_at(3), &[0.8, 0.6, 0.4]);
        assert_eq!(h.values_at(3, 0), vec![1.0, 2.0, 3.0]);

        let mut sparse = BitMask::empty(2, 2);
        sparse.set(1, true);
        h.push(0.2, &LatentGrid::filled(2, 2, 1, 9.0).unwrap(), &sparse).unwrap();
        assert_eq!(h.sigmas_at(1), &[0.6, 0.4, 0.2]);
        assert_eq!(h.sigmas_at(0), &[0.8, 0.6, 0.4]);

        let err = h.push(0.3, &LatentGrid::filled(2, 2, 1, 0.0).unwrap(), &sparse);
        assert!(matches!(err, Err(Error::Ordering { pixel: 1, .. })));
    }

    #[test]
    fn pixel_extrapolation_matches_scalar_path() {
        let mut h = PixelHistory::new(1, 1, 2, 3).unwrap();
        let full = BitMask::full(1, 1);
        let samples = [(1.0, [0.3, -1.0]), (0.7, [0.5, -0.2]), (0.45, [0.4, 0.9])];
        for (s, v) in samples {
            h.push(s, &LatentGrid::new(1, 1, 2, v.to_vec()).unwrap(), &full).unwrap();
        }
        let p = ExtrapolationParams::default();
        let mut out = [0.0; 2];
        h.extrapolate_pixel(0, 0.3, &p, &mut out).unwrap();
        for ch in 0..2 {
            let scalar = newton_extrapolate(h.sigmas_at(0), &h.values_at(0, ch), 0.3, &p).unwrap();
            assert_eq!(out[ch], scalar);
        }
    }

    fn distinct_nodes() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.05f64..0.3, 3).prop_map(|gaps| {
            let mut s = 2.0;
            gaps.iter()
                .map(|g| {
                    s -= g;
                    s
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn polynomial_exactness(nodes in distinct_nodes(), a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, gap in 0.05f64..0.3) {
            let f = |s: f64| a + b * s + c * s * s;
            let vals: Vec<f64> = nodes.iter().map(|&s| f(s)).collect();
            let next = nodes[2] - gap;
            let got = newton_extrapolate(&nodes, &vals, next, &exact(2)).unwrap();
            let want = f(next);
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn linear_in_history_values(nodes in distinct_nodes(), v1 in proptest::collection::vec(-2.0f64..2.0, 3), v2 in proptest::collection::vec(-2.0f64..2.0, 3), a in -2.0f64..2.0, b in -2.0f64..2.0, lambda in 0.0f64..3.0) {
            let p = ExtrapolationParams { order: 2, lambda };
            let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
            let next = nodes[2] - 0.1;
            let lhs = newton_extrapolate(&nodes, &mix, next, &p).unwrap();
            let rhs = a * newton_extrapolate(&nodes, &v1, next, &p).unwrap()
                + b * newton_extrapolate(&nodes, &v2, next, &p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
