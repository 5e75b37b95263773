//! Lloyd k-means with k-means++ seeding, plus a balanced variant whose
//! cluster sizes differ by at most one.
//!
//! Everything runs in `f64` and all reductions happen in point-index order,
//! so a fixed seed gives the same labels on every platform and thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_l2, EmbeddingMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative decrease of inertia falls below this.
    pub tol: f64,
    pub seed: u64,
    pub balanced: bool,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
            balanced: false,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn balanced(mut self, balanced: bool) -> Self {
        self.balanced = balanced;
        self
    }

    pub fn max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub centroids: EmbeddingMatrix<f64>,
    /// Sum of squared distances of points to their assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each Lloyd iteration.
    pub history: Vec<f64>,
}

impl ClusterResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        cluster_sizes(&self.labels, self.centroids.rows())
    }
}

pub fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// Sum of squared distances from each point to centroid `labels[i]`.
pub fn inertia(
    points: &EmbeddingMatrix<f64>,
    centroids: &EmbeddingMatrix<f64>,
    labels: &[usize],
) -> f64 {
    points
        .iter_rows()
        .zip(labels)
        .map(|(p, &l)| squared_l2(p, centroids.row(l)))
        .sum()
}

/// Clusters `points` into `min(params.k, rows)` groups.
pub fn kmeans(points: &EmbeddingMatrix<f64>, params: &KMeansParams) -> Result<ClusterResult> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Data("k-means needs at least one point".into()));
    }
    if params.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if points.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite point coordinates".into()));
    }
    let k = params.k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);

    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<usize>, EmbeddingMatrix<f64>)> = None;
    let mut iterations = 0;

    for _ in 0..params.max_iters.max(1) {
        iterations += 1;
        let next = if params.balanced {
            balanced_assign(points, &centroids)
        } else {
            let (mut next, mut dist) = nearest(points, &centroids);
            reseed_empty(points, &mut centroids, &mut next, &mut dist);
            next
        };
        let unchanged = next == labels;
        labels = next;
        centroids = means(points, &labels, &centroids);
        let current = inertia(points, &centroids, &labels);

        let previous = history.last().copied();
        history.push(current);
        if !params.balanced {
            if let Some(prev) = previous {
                debug_assert!(
                    current <= prev * (1.0 + 1e-12) + 1e-12,
                    "inertia rose {prev} -> {current}"
                );
            }
        }
        // balanced assignment is not a descent step; keep the best state seen
        if best.as_ref().is_none_or(|(b, _, _)| current < *b) {
            best = Some((current, labels.clone(), centroids.clone()));
        }

        if unchanged || current == 0.0 {
            break;
        }
        if let Some(prev) = previous {
            if prev > 0.0 && (prev - current) / prev < params.tol {
                break;
            }
        }
    }

    let (inertia, labels, centroids) = if params.balanced {
        best.expect("at least one iteration")
    } else {
        (history.last().copied().unwrap_or(0.0), labels, centroids)
    };
    Ok(ClusterResult {
        labels,
        centroids,
        inertia,
        iterations,
        history,
    })
}

/// k-means++ seeding. Sampling picks the lowest index whose cumulative
/// weight exceeds the draw; when every point already coincides with a
/// centre, the lowest unused index is taken.
fn plus_plus_seeds(
    points: &EmbeddingMatrix<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> EmbeddingMatrix<f64> {
    let n = points.rows();
    let mut chosen = vec![false; n];
    let mut centres = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centres.push(first);

    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_l2(p, points.row(first)))
        .collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let draw = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > draw {
                    pick = Some(i);
                    break;
                }
            }
            pick.or_else(|| d2.iter().rposition(|&w| w > 0.0))
                .expect("positive total weight")
        } else {
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        centres.push(pick);
        let c = points.row(pick);
        d2.par_iter_mut()
            .zip(points.as_slice().par_chunks_exact(points.dim()))
            .for_each(|(d, p)| *d = d.min(squared_l2(p, c)));
    }

    let mut data = Vec::with_capacity(k * points.dim());
    for &c in &centres {
        data.extend_from_slice(points.row(c));
    }
    EmbeddingMatrix::new(k, points.dim(), data).expect("seed rows are finite")
}

/// Nearest centroid per point (lowest index on ties) and its distance.
fn nearest(
    points: &EmbeddingMatrix<f64>,
    centroids: &EmbeddingMatrix<f64>,
) -> (Vec<usize>, Vec<f64>) {
    points
        .as_slice()
        .par_chunks_exact(points.dim())
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter_rows().enumerate() {
                let d = squared_l2(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Moves the point farthest from its centroid (among clusters with more
/// than one member) into each empty cluster.
fn reseed_empty(
    points: &EmbeddingMatrix<f64>,
    centroids: &mut EmbeddingMatrix<f64>,
    labels: &mut [usize],
    dist: &mut [f64],
) {
    let k = centroids.rows();
    let mut sizes = cluster_sizes(labels, k);
    for c in 0..k {
        if sizes[c] != 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        sizes[labels[i]] -= 1;
        sizes[c] += 1;
        labels[i] = c;
        dist[i] = 0.0;
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
}

fn means(
    points: &EmbeddingMatrix<f64>,
    labels: &[usize],
    previous: &EmbeddingMatrix<f64>,
) -> EmbeddingMatrix<f64> {
    let (k, dim) = (previous.rows(), points.dim());
    let mut sums = EmbeddingMatrix::<f64>::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = count as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= inv);
        }
    }
    sums
}

/// Capacity-constrained assignment. All (point, centroid) pairs are visited
/// in ascending distance order (ties by point, then centroid index); a pair
/// is taken when the point is still free and the centroid still open.
///
/// With `N` points and `k` centroids, exactly `N mod k` clusters may reach
/// `ceil(N / k)` members and the rest stop at `floor(N / k)`, so sizes differ
/// by at most one.
pub fn balanced_assign(
    points: &EmbeddingMatrix<f64>,
    centroids: &EmbeddingMatrix<f64>,
) -> Vec<usize> {
    let (n, k) = (points.rows(), centroids.rows());
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let floor = n / k;
    let mut large_left = n % k;

    let mut pairs: Vec<(f64, u32, u32)> = points
        .as_slice()
        .par_chunks_exact(points.dim())
        .enumerate()
        .flat_map_iter(|(i, p)| {
            centroids
                .iter_rows()
                .enumerate()
                .map(move |(c, centroid)| (squared_l2(p, centroid), i as u32, c as u32))
        })
        .collect();
    pairs.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut labels = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut remaining = n;
    for (_, i, c) in pairs {
        let (i, c) = (i as usize, c as usize);
        if labels[i] != usize::MAX {
            continue;
        }
        let open = sizes[c] < floor || (sizes[c] == floor && large_left > 0);
        if !open {
            continue;
        }
        if sizes[c] == floor {
            large_left -= 1;
        }
        sizes[c] += 1;
        labels[i] = c;
        remaining -= 1;
        if remaining == 0 {
            break;
        }
    }
    labels
}
