//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use region_sched::extrapolate::{divided_differences, newton_extrapolate, ExtrapolationParams};
use region_sched::grid::{make_schedule, BitMask, LatentGrid, ScheduleKind, SigmaSchedule};
use region_sched::io::{decode_npy, encode_npy, load_trace, replay_schedule, write_trace, TraceRecorder};
use region_sched::metrics::{psnr, ssim, PSNR_CAP_DB};
use region_sched::oracle::{
    counter_hash, delta_denoiser, forward_noise, gmm_denoiser, make_scene, oracle_case, Background, GmmPixelPrior,
    OracleCase, SceneSpec,
};
use region_sched::partition::{build_feature_field, dilate_mask, estimate_density, quickshift_segment, QuickshiftParams};
use region_sched::sampler::{
    full_sample, ras_like_sample, sdit_sample, sdit_sample_observed, Denoiser, RunReport, SamplerConfig, Selection,
};
use region_sched::ssd::{ssd_ratio, RefreshPolicy, SsdParams, StepMode};

const SUITE_SEEDS: u64 = 10;
const LONG_RUN: usize = 30;
const SHORT_RUN: usize = 10;
const MATCH_TOL: f64 = 0.02;
const RAS_PATCH: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn unit(seed: u64, i: u64) -> f64 {
    (counter_hash(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}

/// Linear schedule with `steps` denoising steps from σ = 1 to 0.
fn harness_schedule(steps: usize) -> SigmaSchedule {
    make_schedule(ScheduleKind::Linear, 1.0, 0.0, steps + 1).unwrap()
}

struct Suite {
    case: OracleCase,
    schedule: SigmaSchedule,
    full: LatentGrid,
}

fn suite_case(seed: u64, steps: usize) -> Suite {
    let spec = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    let case = oracle_case(&spec, 1.0, 0.05, 1000 + seed).unwrap();
    let schedule = harness_schedule(steps);
    let (full, _) = full_sample(&case.denoiser, &case.x_t, &schedule).unwrap();
    Suite { case, schedule, full }
}

struct Sample {
    psnr: f64,
    compute: f64,
    report: RunReport,
    seconds: f64,
}

fn run_sdit(s: &Suite, ratio: f64, dilation: usize, selection: Selection, seed: u64) -> Sample {
    let mut cfg = SamplerConfig::with_ratio(ratio, dilation);
    cfg.selection = selection;
    cfg.seed = seed;
    let started = Instant::now();
    let (out, report) = sdit_sample(&s.case.denoiser, &s.case.x_t, &s.schedule, &cfg).unwrap();
    Sample {
        psnr: psnr(&out, &s.full, 1.0).unwrap(),
        compute: report.compute_ratio,
        report,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn run_ras(s: &Suite, ratio: f64) -> Sample {
    let started = Instant::now();
    let (out, report) = ras_like_sample(&s.case.denoiser, &s.case.x_t, &s.schedule, ratio, RAS_PATCH).unwrap();
    Sample {
        psnr: psnr(&out, &s.full, 1.0).unwrap(),
        compute: report.compute_ratio,
        report,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

// 1 ---------------------------------------------------------------------

fn degenerate_equivalence() -> Outcome {
    let mismatches: Vec<u64> = (0..20u64)
        .into_par_iter()
        .filter(|&k| {
            let spec = SceneSpec {
                height: 8 + (counter_hash(k, 0) % 25) as usize,
                width: 8 + (counter_hash(k, 1) % 25) as usize,
                channels: 1 + (counter_hash(k, 2) % 3) as usize,
                shape_count: (counter_hash(k, 3) % 6) as usize,
                texture_band: counter_hash(k, 4) % 2 == 0,
                background: if counter_hash(k, 5) % 2 == 0 {
                    Background::Flat
                } else {
                    Background::LinearGradient
                },
                seed: counter_hash(k, 6),
                ..SceneSpec::default()
            };
            let case = oracle_case(&spec, 1.0, 0.05, counter_hash(k, 7)).unwrap();
            let s = make_schedule(ScheduleKind::Cosine, 1.0, 0.0, 3 + (counter_hash(k, 8) % 20) as usize).unwrap();
            let mut cfg = SamplerConfig::with_ratio(1.0, 1);
            cfg.refresh = RefreshPolicy::disabled();
            cfg.seed = k;
            let (full, _) = full_sample(&case.denoiser, &case.x_t, &s).unwrap();
            let (sparse, report) = sdit_sample(&case.denoiser, &case.x_t, &s, &cfg).unwrap();
            sparse.data().iter().zip(full.data()).any(|(a, b)| a.to_bits() != b.to_bits()) || report.compute_ratio != 1.0
        })
        .collect();
    Outcome::new(mismatches.is_empty(), format!("20 pairs, mismatching: {mismatches:?}"))
}

// 2 ---------------------------------------------------------------------

fn newton_exactness() -> Outcome {
    let p = ExtrapolationParams { order: 2, lambda: 0.0 };
    let mut worst: f64 = 0.0;
    let polys: [fn(f64) -> f64; 3] = [|_| 1.7, |s| 0.3 - 2.0 * s, |s| 0.5 + s - 3.0 * s * s];
    for trial in 0..200u64 {
        // Three distinct decreasing nodes at least 0.02 apart.
        let a = 0.5 + unit(trial, 0);
        let b = a - 0.02 - 0.3 * unit(trial, 1);
        let c = b - 0.02 - 0.3 * unit(trial, 2);
        let next = c - 0.02 - 0.3 * unit(trial, 3);
        let nodes = [a, b, c];
        for f in polys {
            let values: Vec<f64> = nodes.iter().map(|&s| f(s)).collect();
            let got = newton_extrapolate(&nodes, &values, next, &p).unwrap();
            let want = f(next);
            worst = worst.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    let dd = divided_differences(&[(1.0, 1.0), (0.8, 0.64), (0.6, 0.36)]).unwrap();
    let coeffs = dd.coefficients();
    let table_ok = (coeffs[1] - 1.8).abs() < 1e-12 && (coeffs[2] - 1.0).abs() < 1e-12;
    let example = newton_extrapolate(&[1.0, 0.8, 0.6], &[1.0, 0.64, 0.36], 0.4, &p).unwrap();
    let example_ok = ((example - 0.16) / 0.16).abs() <= 1e-9;
    Outcome::new(
        worst <= 1e-9 && table_ok && example_ok,
        format!("worst relative error {worst:.2e}; worked example {example}"),
    )
}

// 3 ---------------------------------------------------------------------

fn dilation_oracle() -> Outcome {
    let (h, w) = (16usize, 16usize);
    let mut failures = 0;
    for m in 0..200u64 {
        let density = 0.02 + 0.2 * unit(m, 999);
        let bits: Vec<bool> = (0..h * w).map(|i| unit(m, i as u64) < density).collect();
        let mask = BitMask::from_bits(h, w, bits.clone()).unwrap();
        for r in 1..=3usize {
            let got = dilate_mask(&mask, r);
            for y in 0..h {
                for x in 0..w {
                    let mut want = false;
                    for yy in 0..h {
                        for xx in 0..w {
                            if bits[yy * w + xx] && y.abs_diff(yy) <= r && x.abs_diff(xx) <= r {
                                want = true;
                            }
                        }
                    }
                    if got.get(y, x) != want {
                        failures += 1;
                    }
                }
            }
        }
    }
    Outcome::new(failures == 0, format!("600 mask/radius pairs, {failures} differing pixels"))
}

// 4 ---------------------------------------------------------------------

/// `E[x₀ | x]` for a scalar two-component prior by composite Simpson on 2001 nodes.
fn quadrature_posterior(means: [f64; 2], stds: [f64; 2], weights: [f64; 2], x: f64, sigma: f64) -> f64 {
    let lo = means[0].min(means[1]) - 12.0 * stds[0].max(stds[1]);
    let hi = means[0].max(means[1]) + 12.0 * stds[0].max(stds[1]);
    let n = 2000;
    let h = (hi - lo) / n as f64;
    let density = |x0: f64| {
        let prior: f64 = (0..2)
            .map(|k| weights[k] * (-(x0 - means[k]).powi(2) / (2.0 * stds[k] * stds[k])).exp() / stds[k])
            .sum();
        prior * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp()
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x0 = lo + i as f64 * h;
        let wt = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = density(x0);
        num += wt * x0 * d;
        den += wt * d;
    }
    num / den
}

fn oracle_convergence() -> Outcome {
    let target = make_scene(&SceneSpec {
        height: 16,
        width: 16,
        seed: 3,
        ..SceneSpec::default()
    })
    .unwrap();
    let x = forward_noise(&target, 2.0, 5).unwrap();
    let mut worst_mse: f64 = 0.0;
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        for steps in [2, 3, 11, 31, 101] {
            let s = make_schedule(kind, 2.0, 0.0, steps).unwrap();
            let (out, _) = full_sample(&delta_denoiser(target.clone()), &x, &s).unwrap();
            worst_mse = worst_mse.max(region_sched::metrics::mse(&out, &target).unwrap());
        }
    }

    let mut worst_quad: f64 = 0.0;
    let cases = [
        ([0.2, 0.7], [0.05, 0.05], [0.5, 0.5]),
        ([0.1, 0.4], [0.03, 0.12], [0.3, 0.7]),
        ([-1.0, 1.0], [0.2, 0.2], [0.5, 0.5]),
    ];
    for (means, stds, weights) in cases {
        let grids = means.map(|m| LatentGrid::filled(1, 1, 1, m).unwrap()).to_vec();
        let d = gmm_denoiser(GmmPixelPrior::new(grids, stds.to_vec(), weights.to_vec()).unwrap());
        for sigma in [0.05, 0.2, 0.6] {
            for xv in [-0.3, 0.15, 0.45, 0.9] {
                let ev = d.evaluate(&LatentGrid::filled(1, 1, 1, xv).unwrap(), sigma).unwrap();
                let want = quadrature_posterior(means, stds, weights, xv, sigma);
                worst_quad = worst_quad.max((ev.x_pred.data()[0] - want).abs());
            }
        }
    }
    Outcome::new(
        worst_mse < 1e-20 && worst_quad <= 1e-6,
        format!("delta-target worst MSE {worst_mse:.2e}; mixture vs quadrature worst {worst_quad:.2e}"),
    )
}

// 5, 6 ------------------------------------------------------------------

struct FidelityRuns {
    /// `[seed][ratio index]` for ratios 0.125, 0.25, 0.5.
    sdit: Vec<Vec<Sample>>,
    suites: Vec<Suite>,
}

const FIDELITY_RATIOS: [f64; 3] = [0.125, 0.25, 0.5];

fn fidelity_runs() -> FidelityRuns {
    let suites: Vec<Suite> = (0..SUITE_SEEDS).into_par_iter().map(|s| suite_case(s, LONG_RUN)).collect();
    let sdit = suites
        .par_iter()
        .enumerate()
        .map(|(seed, s)| {
            FIDELITY_RATIOS
                .iter()
                .map(|&r| run_sdit(s, r, 1, Selection::Complexity, seed as u64))
                .collect()
        })
        .collect();
    FidelityRuns { sdit, suites }
}

fn monotone_fidelity(runs: &FidelityRuns) -> Outcome {
    let mut means: Vec<f64> = (0..FIDELITY_RATIOS.len())
        .map(|k| mean(runs.sdit.iter().map(|row| row[k].psnr)))
        .collect();
    // Ratio 1 with the default refresh policy.
    let top = mean(
        runs.suites
            .par_iter()
            .enumerate()
            .map(|(seed, s)| run_sdit(s, 1.0, 1, Selection::Complexity, seed as u64).psnr)
            .collect::<Vec<_>>(),
    );
    means.push(top);
    let ok = means.windows(2).all(|w| w[1] - w[0] >= 0.1);
    let slowest = runs.sdit.iter().flatten().map(|s| s.seconds).fold(0.0, f64::max);
    Outcome::new(
        ok,
        format!(
            "mean PSNR at 0.125/0.25/0.5/1.0: {} (slowest run {slowest:.2}s)",
            means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(" / ")
        ),
    )
}

/// Finds a ratio whose run lands within `MATCH_TOL` of `target` compute,
/// using secant steps kept inside any bracket found so far.
fn match_compute(target: f64, start: f64, max_evals: usize, run: impl Fn(f64) -> Sample) -> Option<(f64, Sample)> {
    let mut seen: Vec<(f64, f64)> = Vec::new();
    let mut ratio = start;
    let mut best: Option<(f64, Sample)> = None;
    for _ in 0..max_evals {
        let s = run(ratio);
        let err = s.compute - target;
        seen.push((ratio, s.compute));
        if err.abs() <= MATCH_TOL {
            return Some((ratio, s));
        }
        if best.as_ref().is_none_or(|(_, b)| (b.compute - target).abs() > err.abs()) {
            best = Some((ratio, s));
        }
        let below = seen.iter().filter(|p| p.1 < target).max_by(|a, b| a.1.total_cmp(&b.1));
        let above = seen.iter().filter(|p| p.1 > target).min_by(|a, b| a.1.total_cmp(&b.1));
        ratio = match (below, above) {
            (Some(&(r0, c0)), Some(&(r1, c1))) if (c1 - c0).abs() > 1e-12 => r0 + (target - c0) * (r1 - r0) / (c1 - c0),
            _ => {
                let slope = if seen.len() >= 2 {
                    let (a, b) = (seen[seen.len() - 2], seen[seen.len() - 1]);
                    if (b.0 - a.0).abs() > 1e-9 && (b.1 - a.1).abs() > 1e-9 {
                        (b.1 - a.1) / (b.0 - a.0)
                    } else {
                        0.5
                    }
                } else {
                    0.5
                };
                ratio - err / slope.max(0.05)
            }
        }
        .clamp(0.01, 1.0);
    }
    best.filter(|(_, s)| (s.compute - target).abs() <= MATCH_TOL)
}

fn selection_beats_null(runs: &FidelityRuns) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, &ratio) in FIDELITY_RATIOS.iter().enumerate().filter(|(_, r)| **r == 0.25 || **r == 0.5) {
        let per_seed: Vec<(bool, bool, String)> = runs
            .suites
            .par_iter()
            .enumerate()
            .map(|(seed, s)| {
                let ours = &runs.sdit[seed][k];
                let random = match_compute(ours.compute, ratio, 6, |r| run_sdit(s, r, 1, Selection::Random, seed as u64));
                let ras = match_compute(ours.compute, ours.compute, 40, |r| run_ras(s, r));
                let beats_random = random.as_ref().is_some_and(|(_, b)| ours.psnr >= b.psnr);
                let beats_ras = ras.as_ref().is_some_and(|(_, b)| ours.psnr >= b.psnr);
                let fmt = |m: &Option<(f64, Sample)>| match m {
                    Some((r, b)) => format!("{:.2}@{:.3}(r={r:.3})", b.psnr, b.compute),
                    None => "unmatched".into(),
                };
                (
                    beats_random,
                    beats_ras,
                    format!("seed {seed}: sdit {:.2}@{:.3} random {} ras {}", ours.psnr, ours.compute, fmt(&random), fmt(&ras)),
                )
            })
            .collect();
        let wins_random = per_seed.iter().filter(|p| p.0).count();
        let wins_ras = per_seed.iter().filter(|p| p.1).count();
        ok &= wins_random >= 8 && wins_ras >= 7;
        lines.push(format!("ratio {ratio}: beats random on {wins_random}/10, ras on {wins_ras}/10"));
        for p in &per_seed {
            lines.push(format!("    {}", p.2));
        }
    }
    Outcome::new(ok, lines.join("\n"))
}

// 7 ---------------------------------------------------------------------

fn dilation_trend() -> Outcome {
    let rows: Vec<Vec<Sample>> = (0..SUITE_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let s = suite_case(seed, SHORT_RUN);
            (0..=3).map(|r| run_sdit(&s, 0.2, r, Selection::Complexity, seed)).collect()
        })
        .collect();
    let psnr_by_r: Vec<f64> = (0..=3).map(|r| mean(rows.iter().map(|row| row[r].psnr))).collect();
    let compute_by_r: Vec<f64> = (0..=3).map(|r| mean(rows.iter().map(|row| row[r].compute))).collect();
    let monotone_seeds = rows
        .iter()
        .filter(|row| row.windows(2).all(|w| w[1].compute > w[0].compute))
        .count();
    let ok = psnr_by_r[1] > psnr_by_r[0] && monotone_seeds == rows.len();
    Outcome::new(
        ok,
        format!(
            "mean PSNR r=0..3: {:?}; mean compute r=0..3: {:?}; compute strictly increasing on {monotone_seeds}/{} seeds",
            psnr_by_r.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            compute_by_r.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            rows.len()
        ),
    )
}

// 8 ---------------------------------------------------------------------

fn budget_accounting() -> Outcome {
    let ratio = 0.2;
    let policy = RefreshPolicy::default();
    let results: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let s = suite_case(seed, LONG_RUN);
            let sample = run_sdit(&s, ratio, 0, Selection::Complexity, seed);
            let n = (sample.report.height * sample.report.width) as f64;
            let total = sample.report.steps.len();
            let mut over = 0;
            let (mut fracs, mut ratios) = (Vec::new(), Vec::new());
            for r in &sample.report.steps {
                if r.mode != StepMode::Sparse || r.t < policy.warmup_steps || r.t >= total - policy.cooldown_steps {
                    continue;
                }
                let frac = r.active_pixel_count as f64 / n;
                if frac > r.ratio + 1e-12 {
                    over += 1;
                }
                fracs.push(frac);
                ratios.push(r.ratio);
            }
            (over, fracs, ratios)
        })
        .collect();
    let over: usize = results.iter().map(|r| r.0).sum();
    let steps: usize = results.iter().map(|r| r.1.len()).sum();
    let mean_frac = mean(results.iter().flat_map(|r| r.1.iter().copied()));
    let mean_ratio = mean(results.iter().flat_map(|r| r.2.iter().copied()));
    Outcome::new(
        over == 0 && steps > 0 && mean_frac >= 0.5 * mean_ratio,
        format!("{steps} sparse steps, {over} over budget; mean active fraction {mean_frac:.4} vs mean scheduled ratio {mean_ratio:.4}"),
    )
}

// 9 ---------------------------------------------------------------------

fn quickshift_properties() -> Outcome {
    let params = |h: f64, link: f64| QuickshiftParams {
        bandwidth: h,
        window: 5,
        knn: 8,
        spatial_weight: 0.5,
        max_link_dist: link,
        seed: 0,
    };
    let mut problems = Vec::new();
    for k in 0..20u64 {
        let (h, w) = (4 + (counter_hash(k, 0) % 20) as usize, 4 + (counter_hash(k, 1) % 20) as usize);
        let c = 1 + (counter_hash(k, 2) % 2) as usize;
        let x_pred = LatentGrid::from_fn(h, w, c, |y, x, ch| unit(k, (y * w + x) as u64 * 4 + ch as u64)).unwrap();
        let eps = LatentGrid::from_fn(h, w, c, |y, x, ch| unit(k ^ 7, (y * w + x) as u64 * 4 + ch as u64) - 0.5).unwrap();
        let f = build_feature_field(&x_pred, &eps, 0.5).unwrap();
        let p = params(0.3, 0.9);
        let rho = estimate_density(&f, &p).unwrap();
        let a = quickshift_segment(&f, &rho, &p).unwrap();
        let b = quickshift_segment(&f, &estimate_density(&f, &p).unwrap(), &p).unwrap();
        let count = a.region_count();
        let mut seen = vec![false; count];
        for &l in a.labels() {
            if (l as usize) < count {
                seen[l as usize] = true;
            } else {
                problems.push(format!("case {k}: label {l} out of range"));
            }
        }
        if a.labels().len() != h * w || seen.iter().any(|s| !s) {
            problems.push(format!("case {k}: labels not dense over full grid"));
        }
        if a != b {
            problems.push(format!("case {k}: not deterministic"));
        }
    }
    let flat = LatentGrid::filled(9, 7, 1, 0.4).unwrap();
    let f = build_feature_field(&flat, &LatentGrid::zeros(9, 7, 1).unwrap(), 0.0).unwrap();
    let p = params(0.5, 1.5);
    let uniform = quickshift_segment(&f, &estimate_density(&f, &p).unwrap(), &p).unwrap().region_count();
    if uniform != 1 {
        problems.push(format!("uniform field gave {uniform} regions"));
    }
    let halves = LatentGrid::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
    let f = build_feature_field(&halves, &LatentGrid::zeros(8, 8, 1).unwrap(), 0.5).unwrap();
    let p = params(0.3, 0.9);
    let m = quickshift_segment(&f, &estimate_density(&f, &p).unwrap(), &p).unwrap();
    let split = m.region_count() == 2 && (0..64).all(|i| (m.label(i) == m.label(0)) == (i % 8 < 4));
    if !split {
        problems.push(format!("half-planes gave {} regions", m.region_count()));
    }
    Outcome::new(problems.is_empty(), if problems.is_empty() { "20 random fields, uniform and half-plane cases".into() } else { problems.join("; ") })
}

// 10 --------------------------------------------------------------------

fn ssd_schedule() -> Outcome {
    let p = SsdParams {
        p_min: 0.2,
        p_max: 1.0,
        tau1: 0.1,
        tau2: 0.95,
    };
    let total = 40;
    let formula = |u: f64| {
        if u < p.tau1 || u > p.tau2 {
            p.p_max
        } else {
            p.p_min + (p.p_max - p.p_min) / 2.0 * (1.0 + (std::f64::consts::PI * (u - p.tau1) / (p.tau2 - p.tau1)).cos())
        }
    };
    // t/T = 0.05, the phase midpoint 0.525 (t = 21), τ2 = 0.95 (t = 38) and just past it.
    let checks = [(2usize, p.p_max), (21, p.p_min + (p.p_max - p.p_min) / 2.0), (38, p.p_min), (39, p.p_max)];
    let mut worst: f64 = 0.0;
    for (t, want) in checks {
        let got = ssd_ratio(t, total, &p);
        worst = worst.max((got - want).abs()).max((got - formula(t as f64 / total as f64)).abs());
    }
    Outcome::new(worst <= 1e-12, format!("worst deviation {worst:.2e}"))
}

// 11 --------------------------------------------------------------------

fn metric_sanity() -> Outcome {
    let a = make_scene(&SceneSpec {
        height: 32,
        width: 32,
        seed: 11,
        ..SceneSpec::default()
    })
    .unwrap();
    let shifted = LatentGrid::from_fn(32, 32, 1, |y, x, c| a.get(y, x, c) + 0.1).unwrap();
    let cap = psnr(&a, &a, 1.0).unwrap();
    let offset = psnr(&a, &shifted, 1.0).unwrap();
    let same = ssim(&a, &a, 1.0).unwrap();
    // Constant images 0.5 and 0.7 on a unit range: only the luminance term survives.
    let c1 = (0.01f64).powi(2);
    let closed = (2.0 * 0.5 * 0.7 + c1) / (0.25 + 0.49 + c1);
    let constant = ssim(
        &LatentGrid::filled(16, 16, 1, 0.5).unwrap(),
        &LatentGrid::filled(16, 16, 1, 0.7).unwrap(),
        1.0,
    )
    .unwrap();
    let ok = cap == PSNR_CAP_DB && (offset - 20.0).abs() <= 1e-9 && same == 1.0 && (constant - closed).abs() <= 1e-4;
    Outcome::new(
        ok,
        format!("cap {cap}; offset {offset:.12}; ssim(a,a) {same}; constant pair {constant:.6} vs closed form {closed:.6}"),
    )
}

// 12 --------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_region-sched"))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn io_and_reproducibility() -> Outcome {
    let mut problems = Vec::new();

    let specials = [0.0, -0.0, f64::MIN_POSITIVE, 5e-324, f64::MAX, -1.5, 1.0 / 3.0];
    for k in 0..50u64 {
        let (h, w, c) = (1 + (k % 7) as usize, 1 + (k % 5) as usize, 1 + (k % 3) as usize);
        let g = LatentGrid::from_fn(h, w, c, |y, x, ch| {
            let i = ((y * w + x) * c + ch) as u64;
            if counter_hash(k, i) % 5 == 0 {
                specials[(counter_hash(k ^ 1, i) % specials.len() as u64) as usize]
            } else {
                f64::from_bits(counter_hash(k, i) & 0xBFEF_FFFF_FFFF_FFFF)
            }
        })
        .unwrap();
        let back = decode_npy(&encode_npy(&g)).unwrap();
        if back.shape() != g.shape() || back.data().iter().zip(g.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            problems.push(format!("npy round trip {k} not bit-exact"));
        }
    }

    // In-loop probes against replay of the recorded trace.
    let s = suite_case(4, SHORT_RUN);
    let recorder = TraceRecorder::new(&s.case.denoiser);
    let cfg = SamplerConfig::with_ratio(0.3, 1);
    let mut in_loop = Vec::new();
    sdit_sample_observed(&recorder, &s.case.x_t, &s.schedule, &cfg, |v| {
        in_loop.push(v.outcome.record.divergence);
        Ok(())
    })
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_trace(tmp.path().join("trace"), &recorder.into_frames()).unwrap();
    let replay = replay_schedule(&load_trace(tmp.path().join("trace")).unwrap(), &cfg).unwrap();
    let probed = in_loop.iter().filter(|d| d.is_some()).count();
    for (t, (a, row)) in in_loop.iter().zip(&replay.rows).enumerate() {
        let same = match (a, row.divergence) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
            (None, None) => true,
            _ => false,
        };
        if !same {
            problems.push(format!("step {t}: in-loop {a:?} vs replay {:?}", row.divergence));
        }
    }
    if probed == 0 {
        problems.push("no divergence probes were taken".into());
    }

    // Every subcommand twice with the same seed.
    let cfg_path = tmp.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{
  "scene": {"height": 24, "width": 24, "seed": 2},
  "schedule": {"steps": 9},
  "sampler": {"ssd": {"p_min": 0.3}},
  "emit_maps": true,
  "record_trace": true,
  "sweep": {"scorer": ["ours", "l2_norm", "noise_amplitude", "stddev"], "ratio": [0.2], "dilation": [0, 1]}
}"#,
    )
    .unwrap();
    let mut trees = Vec::new();
    let out = tmp.path().join("out");
    for attempt in 0..2 {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        let mut ok = true;
        for (sub, extra) in [
            ("run", vec![]),
            ("maps", vec![]),
            ("ablate", vec![]),
            ("replay", vec!["--trace".to_string(), out.join("run/trace").display().to_string()]),
        ] {
            let status = cli()
                .arg(sub)
                .arg(&cfg_path)
                .arg("--out")
                .arg(out.join(sub))
                .args(["--seed", "7"])
                .args(&extra)
                .status()
                .unwrap();
            ok &= status.success();
        }
        if !ok {
            problems.push(format!("a subcommand failed on attempt {attempt}"));
        }
        trees.push(tree(&out));
    }
    let files = trees[0].len();
    if trees[0] != trees[1] {
        problems.push("repeated CLI runs differ".into());
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("50 npy round trips; {probed} probes replayed; {files} CLI output files identical")
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let started = Instant::now();
    let runs = fidelity_runs();
    let results: Vec<(&str, Outcome)> = vec![
        ("degenerate equivalence", degenerate_equivalence()),
        ("newton exactness", newton_exactness()),
        ("dilation oracle", dilation_oracle()),
        ("full-sample oracle convergence", oracle_convergence()),
        ("monotone fidelity", monotone_fidelity(&runs)),
        ("selection beats null", selection_beats_null(&runs)),
        ("dilation trend", dilation_trend()),
        ("budget accounting", budget_accounting()),
        ("quickshift properties", quickshift_properties()),
        ("ssd schedule", ssd_schedule()),
        ("metric sanity", metric_sanity()),
        ("i/o and reproducibility", io_and_reproducibility()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:2} {:<32} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
