use std::collections::BTreeSet;

use super::{sq_dist, FeatureField};
use crate::error::{Error, Result};
use crate::grid::RegionMap;

/// Merges every region smaller than `min_size` into the 4-adjacent region
/// with the nearest mean descriptor, until no undersized region remains (or a
/// single region is left).
///
/// The smallest region is merged first (ties: lowest id). Merged regions keep
/// the id of the absorbing region until the final dense relabel.
pub fn enforce_min_region_size(
    m: &RegionMap,
    f: &FeatureField,
    min_size: usize,
) -> Result<RegionMap> {
    if min_size == 0 {
        return Err(Error::param("min_size must be >= 1"));
    }
    if m.height() != f.height() || m.width() != f.width() {
        return Err(Error::param("region map and feature field shapes differ"));
    }
    let (h, w) = (m.height(), m.width());
    let k = m.region_count();
    let d = f.dim();

    let mut sizes = m.region_sizes();
    let mut sums = vec![0.0; k * d];
    for i in 0..h * w {
        let l = m.label(i) as usize;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(f.descriptor(i)) {
            *s += v;
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for y in 0..h {
        for x in 0..w {
            let a = m.label(y * w + x) as usize;
            if x + 1 < w {
                let b = m.label(y * w + x + 1) as usize;
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            if y + 1 < h {
                let b = m.label((y + 1) * w + x) as usize;
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
    }
    // Points each original id at its current owner.
    let mut owner: Vec<usize> = (0..k).collect();
    let mut small: BTreeSet<(usize, usize)> = (0..k)
        .filter(|&r| sizes[r] < min_size)
        .map(|r| (sizes[r], r))
        .collect();
    let mut alive = k;

    while alive > 1 {
        let Some(&(size, src)) = small.first() else {
            break;
        };
        small.remove(&(size, src));
        let src_mean: Vec<f64> = sums[src * d..(src + 1) * d]
            .iter()
            .map(|s| s / size as f64)
            .collect();
        let mut target: Option<(f64, usize)> = None;
        for &nb in &adj[src] {
            let mean: Vec<f64> = sums[nb * d..(nb + 1) * d]
                .iter()
                .map(|s| s / sizes[nb] as f64)
                .collect();
            let dd = sq_dist(&src_mean, &mean);
            if target.is_none_or(|(bd, _)| dd < bd) {
                target = Some((dd, nb));
            }
        }
        let Some((_, dst)) = target else {
            // Isolated region: nothing to merge into.
            continue;
        };

        if sizes[dst] < min_size {
            small.remove(&(sizes[dst], dst));
        }
        sizes[dst] += sizes[src];
        sizes[src] = 0;
        for j in 0..d {
            sums[dst * d + j] += sums[src * d + j];
        }
        let src_adj = std::mem::take(&mut adj[src]);
        for nb in src_adj {
            adj[nb].remove(&src);
            if nb != dst {
                adj[nb].insert(dst);
                adj[dst].insert(nb);
            }
        }
        for o in owner.iter_mut() {
            if *o == src {
                *o = dst;
            }
        }
        if sizes[dst] < min_size {
            small.insert((sizes[dst], dst));
        }
        alive -= 1;
    }

    let merged: Vec<usize> = m.labels().iter().map(|&l| owner[l as usize]).collect();
    RegionMap::from_labels(h, w, &merged)
}
