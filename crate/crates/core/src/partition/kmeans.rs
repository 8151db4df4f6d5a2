use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, FeatureField};
use crate::error::{Error, Result};
use crate::grid::RegionMap;

/// Lloyd's K-means with seeded K-means++ initialization. Regions may be
/// spatially disconnected.
pub fn kmeans_partition(f: &FeatureField, k: usize, iters: usize, seed: u64) -> Result<RegionMap> {
    kmeans_with_objective(f, k, iters, seed).map(|(m, _)| m)
}

/// Like [`kmeans_partition`], also returning the objective (sum of squared
/// distances to the assigned centroid) after every assignment pass.
pub fn kmeans_with_objective(
    f: &FeatureField,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(RegionMap, Vec<f64>)> {
    let n = f.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("K must be in [1, {n}], got {k}")));
    }
    let d = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(f, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut objective = Vec::new();

    for it in 0..iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (best, bd) = nearest(f.descriptor(i), &centroids, d);
            changed |= best != assign[i];
            assign[i] = best;
            dist[i] = bd;
        }
        objective.push(dist.iter().sum());
        if it > 0 && !changed {
            break;
        }

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * d..(assign[i] + 1) * d]
                .iter_mut()
                .zip(f.descriptor(i))
            {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
                continue;
            }
            // Re-seed an empty cluster at the point farthest from its centroid.
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a free point");
            taken[far] = true;
            dist[far] = 0.0;
            centroids[c * d..(c + 1) * d].copy_from_slice(f.descriptor(far));
        }
    }

    let map = RegionMap::from_labels(f.height(), f.width(), &assign)?;
    Ok((map, objective))
}

fn nearest(x: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dd = sq_dist(x, cen);
        if dd < best.1 {
            best = (c, dd);
        }
    }
    best
}

fn init_plus_plus(f: &FeatureField, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = f.len();
    let d = f.dim();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(f.descriptor(first));
    let mut d2: Vec<f64> = (0..n).map(|i| f.dist2(i, first)).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // All remaining points coincide with a centroid; take the first unused one.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        let start = centroids.len();
        centroids.extend_from_slice(f.descriptor(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            let dd = sq_dist(f.descriptor(i), &centroids[start..start + d]);
            if dd < *v {
                *v = dd;
            }
        }
    }
    centroids
}
