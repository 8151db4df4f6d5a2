//! Kernel density over k nearest neighbours in descriptor space.
//!
//! Fields up to [`EXACT_SCAN_LIMIT`] pixels use a brute-force scan. Larger
//! fields go through a kd-tree. Both order neighbours by `(distance², index)`
//! so they return the same neighbour set and the same sums.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{sq_dist, FeatureField, QuickshiftParams};
use crate::error::{Error, Result};

/// Pixel count at or below which density estimation always uses an exact scan.
pub const EXACT_SCAN_LIMIT: usize = 4096;

/// Nonnegative density per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::param("density length does not match grid"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("density values must be finite and >= 0"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighbor {
    d2: f64,
    idx: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `k` nearest neighbours of every point (excluding itself) by exhaustive scan.
/// Each list holds `(distance², index)` sorted ascending.
pub fn knn_exact(f: &FeatureField, k: usize) -> Vec<Vec<(f64, usize)>> {
    match f.dim() {
        4 => knn_scan::<4>(f, k),
        6 => knn_scan::<6>(f, k),
        _ => knn_scan::<0>(f, k),
    }
}

/// `D` is the descriptor length, or 0 for any length.
fn knn_scan<const D: usize>(f: &FeatureField, k: usize) -> Vec<Vec<(f64, usize)>> {
    let n = f.len();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let di = f.descriptor(i);
            // Sorted by (d², index); scanning j upwards means an equal distance
            // never displaces an earlier entry.
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            if k == 0 {
                return best;
            }
            let mut worst = f64::INFINITY;
            for (j, dj) in f.data().chunks_exact(f.dim()).enumerate() {
                let d2 = if D == 0 {
                    sq_dist(di, dj)
                } else {
                    let (a, b): (&[f64; D], &[f64; D]) = (di.try_into().unwrap(), dj.try_into().unwrap());
                    let mut acc = 0.0;
                    for c in 0..D {
                        acc += (a[c] - b[c]) * (a[c] - b[c]);
                    }
                    acc
                };
                if !(d2 < worst) || j == i {
                    continue;
                }
                let at = best.partition_point(|&(bd, _)| bd <= d2);
                best.insert(at, (d2, j));
                if best.len() > k {
                    best.pop();
                }
                if best.len() == k {
                    worst = best[k - 1].0;
                }
            }
            best
        })
        .collect()
}

/// Static kd-tree over the descriptors of a feature field.
pub struct KdTree<'a> {
    field: &'a FeatureField,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

const LEAF_SIZE: usize = 16;

impl<'a> KdTree<'a> {
    pub fn build(field: &'a FeatureField) -> Self {
        let mut tree = KdTree {
            field,
            order: (0..field.len()).collect(),
            nodes: Vec::new(),
        };
        let n = tree.order.len();
        tree.build_node(0, n);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let dim = self.widest_dim(start, end);
        let field = self.field;
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            field.descriptor(a)[dim]
                .total_cmp(&field.descriptor(b)[dim])
                .then(a.cmp(&b))
        });
        let value = field.descriptor(self.order[mid])[dim];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = KdNode::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn widest_dim(&self, start: usize, end: usize) -> usize {
        let d = self.field.dim();
        let mut best = (0, f64::NEG_INFINITY);
        for dim in 0..d {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.field.descriptor(i)[dim];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > best.1 {
                best = (dim, hi - lo);
            }
        }
        best.0
    }

    /// `k` nearest neighbours of point `i`, excluding `i` itself.
    pub fn query(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, self.field.descriptor(i), i, k, &mut heap);
        }
        let mut out: Vec<Neighbor> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|nb| (nb.d2, nb.idx)).collect()
    }

    fn search(&self, node: usize, q: &[f64], skip: usize, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if j == skip {
                        continue;
                    }
                    let nb = Neighbor {
                        d2: sq_dist(q, self.field.descriptor(j)),
                        idx: j,
                    };
                    if heap.len() < k {
                        heap.push(nb);
                    } else if nb < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(nb);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, k, heap);
                // Points equal to the split value can sit on either side, so only
                // prune when the plane is strictly beyond the current worst.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, skip, k, heap);
                }
            }
        }
    }
}

/// `k` nearest neighbours of every point through a kd-tree.
pub fn knn_kdtree(f: &FeatureField, k: usize) -> Vec<Vec<(f64, usize)>> {
    let tree = KdTree::build(f);
    (0..f.len()).into_par_iter().map(|i| tree.query(i, k)).collect()
}

/// `ρ_i = Σ_{j ∈ kNN(i)} exp(−‖f_i − f_j‖² / 2h²)`.
pub fn estimate_density(f: &FeatureField, p: &QuickshiftParams) -> Result<DensityField> {
    p.validate()?;
    let n = f.len();
    if p.knn >= n {
        return Err(Error::param(format!(
            "knn ({}) must be below the pixel count ({n})",
            p.knn
        )));
    }
    let neighbors = if n <= EXACT_SCAN_LIMIT {
        knn_exact(f, p.knn)
    } else {
        knn_kdtree(f, p.knn)
    };
    let inv = 1.0 / (2.0 * p.bandwidth * p.bandwidth);
    let values = neighbors
        .iter()
        .map(|nbs| nbs.iter().map(|&(d2, _)| (-d2 * inv).exp()).sum())
        .collect();
    DensityField::new(f.height(), f.width(), values)
}
