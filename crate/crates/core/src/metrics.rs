//! Pixel and structural fidelity metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// PSNR reported for (near-)identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &LatentGrid, b: &LatentGrid) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(range² / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &LatentGrid, b: &LatentGrid, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::param(format!("data_range must be > 0, got {data_range}")));
    }
    let m = mse(a, b)?;
    let peak = data_range * data_range;
    if m < peak * 10f64.powf(-PSNR_CAP_DB / 10.0) {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let norm: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

/// Gaussian-weighted means over every fully contained window.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(k, g)| g * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, g)| g * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid 11×11 Gaussian windows (σ = 1.5),
/// averaged across channels.
pub fn ssim(a: &LatentGrid, b: &LatentGrid, data_range: f64) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::param(format!("data_range must be > 0, got {data_range}")));
    }
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::param(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let win = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = (0..h * w).map(|i| a.pixel(i)[ch]).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.pixel(i)[ch]).collect();
        let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(x, y)| x * y).collect::<Vec<f64>>();
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let aa = filter_valid(&sq(&pa, &pa), h, w, &win);
        let bb = filter_valid(&sq(&pb, &pb), h, w, &win);
        let ab = filter_valid(&sq(&pa, &pb), h, w, &win);
        let mut sum = 0.0;
        for k in 0..mu_a.len() {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = aa[k] - ma * ma;
            let vb = bb[k] - mb * mb;
            let cov = ab[k] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

pub fn compare(a: &LatentGrid, b: &LatentGrid, data_range: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        mse: mse(a, b)?,
        psnr: psnr(a, b, data_range)?,
        ssim: ssim(a, b, data_range)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{forward_noise, make_scene, SceneSpec};
    use proptest::prelude::*;

    fn offset(g: &LatentGrid, c: f64) -> LatentGrid {
        let (h, w, ch) = g.shape();
        LatentGrid::new(h, w, ch, g.data().iter().map(|v| v + c).collect()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = make_scene(&SceneSpec { height: 16, width: 16, seed: 2, ..SceneSpec::default() }).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((mse(&a, &offset(&a, 0.1)).unwrap() - 0.01).abs() < 1e-15);
        let b = forward_noise(&a, 0.3, 1).unwrap();
        let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let mut naive = 0.0;
        for d in &diffs {
            naive += d * d;
        }
        assert!((mse(&a, &b).unwrap() - naive / diffs.len() as f64).abs() < 1e-12);
        assert!(mse(&a, &LatentGrid::zeros(16, 15, 1).unwrap()).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = LatentGrid::filled(12, 12, 1, 0.25).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 99.0);
        assert!((psnr(&a, &offset(&a, 0.1), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &offset(&a, 0.5), 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = make_scene(&SceneSpec { height: 24, width: 20, seed: 4, ..SceneSpec::default() }).unwrap();
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);

        let c1 = 1e-4;
        let want = (2.0 * 0.35 + c1) / (0.25 + 0.49 + c1);
        let p = LatentGrid::filled(16, 16, 1, 0.5).unwrap();
        let q = LatentGrid::filled(16, 16, 1, 0.7).unwrap();
        assert!((ssim(&p, &q, 1.0).unwrap() - want).abs() < 1e-9);

        let noisy = forward_noise(&a, 0.5, 3).unwrap();
        let mild = forward_noise(&a, 0.05, 3).unwrap();
        assert!(ssim(&a, &noisy, 1.0).unwrap() < ssim(&a, &mild, 1.0).unwrap());
        assert!(ssim(&a, &offset(&a, 0.2), 1.0).unwrap() < 1.0);
        assert!(ssim(&LatentGrid::zeros(10, 30, 1).unwrap(), &LatentGrid::zeros(10, 30, 1).unwrap(), 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_translation_invariant(seed in 0u64..1000, s in 0.01f64..0.5, c in -2.0f64..2.0) {
            let a = make_scene(&SceneSpec { height: 14, width: 13, channels: 2, seed, ..SceneSpec::default() }).unwrap();
            let b = forward_noise(&a, s, seed + 1).unwrap();
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
            let m = ssim(&a, &b, 1.0).unwrap();
            prop_assert!((-1.0..=1.0).contains(&m));
            let shifted = mse(&offset(&a, c), &offset(&b, c)).unwrap();
            prop_assert!((shifted - mse(&a, &b).unwrap()).abs() < 1e-12);
        }
    }
}
