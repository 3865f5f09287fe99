//! Lloyd's k-means with k-means++ seeding, and the cluster-count estimate
//! used to find semantic centers of an appropriate granularity.

use rayon::prelude::*;

use crate::error::{param_err, Result};
use crate::math::{self, RngState};
use crate::matrix::EmbeddingMatrix;

/// Controls how fine-grained the semantic centers are.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GranularityConfig {
    /// Expected size of a cluster compact enough to share one set of nouns.
    pub compact_cluster_size: usize,
    /// Minimum number of centers per target class.
    pub centers_per_class: usize,
}

impl Default for GranularityConfig {
    fn default() -> Self {
        Self {
            compact_cluster_size: 300,
            centers_per_class: 3,
        }
    }
}

/// `max(ceil(n / compact_cluster_size), target_k * centers_per_class)`,
/// clamped to `n`.
pub fn estimate_k(n: usize, target_k: usize, cfg: &GranularityConfig) -> Result<usize> {
    if cfg.compact_cluster_size == 0 || cfg.centers_per_class == 0 {
        return Err(param_err("granularity parameters must be positive"));
    }
    if target_k < 2 {
        return Err(param_err(format!(
            "target cluster count must be >= 2, got {target_k}"
        )));
    }
    if n < target_k {
        return Err(param_err(format!(
            "{n} samples cannot form {target_k} clusters"
        )));
    }
    let by_size = n.div_ceil(cfg.compact_cluster_size);
    Ok(by_size.max(target_k * cfg.centers_per_class).min(n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KmeansParams {
    pub max_iter: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tol: f64,
    /// Independent seedings; the run with the lowest inertia is kept.
    pub n_init: usize,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KmeansResult {
    /// Raw centroids (member means).
    pub centroids: EmbeddingMatrix,
    /// Unit-normalized member sums, i.e. the semantic centers.
    pub centers: EmbeddingMatrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step of the kept run.
    pub inertia_history: Vec<f64>,
}

impl KmeansResult {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Nearest center per row (ties to the lower center id) and its squared distance.
fn assign(x: &EmbeddingMatrix, centers: &[f64], k: usize) -> Vec<(usize, f64)> {
    let dim = x.dim();
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(row, &centers[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn plus_plus_init(x: &EmbeddingMatrix, k: usize, rng: &mut RngState) -> Vec<f64> {
    let (n, dim) = (x.rows(), x.dim());
    let mut centers = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.uniform_int(n);
    chosen[first] = true;
    centers.extend(x.row_f64(first));
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), &centers[0..dim]))
        .collect();

    while centers.len() < k * dim {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the cumulative sum just short of the target
            pick.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.uniform_int(free.len())]
        };
        chosen[pick] = true;
        let start = centers.len();
        centers.extend(x.row_f64(pick));
        let c = &centers[start..];
        min_d
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(sq_dist(x.row(i), c)));
    }
    centers
}

/// Moves the point farthest from its center into each empty cluster.
fn repair_empty(x: &EmbeddingMatrix, centers: &mut [f64], labels: &mut [(usize, f64)], k: usize) {
    let dim = x.dim();
    loop {
        let mut sizes = vec![0usize; k];
        for &(c, _) in labels.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<usize> = None;
        for (i, &(c, d)) in labels.iter().enumerate() {
            if sizes[c] > 1 && far.is_none_or(|f| d > labels[f].1) {
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        labels[i] = (empty, 0.0);
        for (dst, src) in centers[empty * dim..(empty + 1) * dim]
            .iter_mut()
            .zip(x.row(i))
        {
            *dst = *src as f64;
        }
    }
}

fn update_centers(x: &EmbeddingMatrix, labels: &[(usize, f64)], centers: &mut [f64], k: usize) {
    let dim = x.dim();
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &(c, _)) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x.row_f64(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centers[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s / counts[c] as f64;
            }
        }
    }
}

struct Run {
    centers: Vec<f64>,
    labels: Vec<(usize, f64)>,
    inertia: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(x: &EmbeddingMatrix, k: usize, rng: &mut RngState, params: &KmeansParams) -> Run {
    let mut centers = plus_plus_init(x, k, rng);
    let mut labels: Vec<(usize, f64)> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter.max(1) {
        iterations += 1;
        let mut next = assign(x, &centers, k);
        repair_empty(x, &mut centers, &mut next, k);
        let inertia: f64 = next.iter().map(|&(_, d)| d).sum();
        let unchanged = !labels.is_empty() && next.iter().zip(&labels).all(|(a, b)| a.0 == b.0);
        let prev = history.last().copied();
        history.push(inertia);
        labels = next;
        if unchanged {
            break;
        }
        update_centers(x, &labels, &mut centers, k);
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - inertia) / prev < params.tol {
                break;
            }
        }
    }

    // final centroids are the member means of the returned assignment
    update_centers(x, &labels, &mut centers, k);
    let dim = x.dim();
    for (i, l) in labels.iter_mut().enumerate() {
        l.1 = sq_dist(x.row(i), &centers[l.0 * dim..(l.0 + 1) * dim]);
    }
    let inertia: f64 = labels.iter().map(|&(_, d)| d).sum();
    if history.last().is_none_or(|&h| inertia < h) {
        history.push(inertia);
    }
    Run {
        centers,
        labels,
        inertia,
        iterations,
        history,
    }
}

/// Clusters the rows of `x` into `k` groups by squared Euclidean distance.
pub fn kmeans_fit(
    x: &EmbeddingMatrix,
    k: usize,
    rng: &mut RngState,
    params: &KmeansParams,
) -> Result<KmeansResult> {
    if k == 0 || k > x.rows() {
        return Err(param_err(format!(
            "k = {k} is invalid for {} rows",
            x.rows()
        )));
    }
    if params.n_init == 0 {
        return Err(param_err("n_init must be >= 1"));
    }
    let mut best: Option<Run> = None;
    for _ in 0..params.n_init {
        let run = lloyd(x, k, rng, params);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("n_init >= 1");
    let dim = x.dim();

    // semantic centers: normalized member sums (same direction as the mean)
    let mut center_data = vec![0f32; k * dim];
    for c in 0..k {
        let out = &mut center_data[c * dim..(c + 1) * dim];
        if math::normalize_f64_into(&run.centers[c * dim..(c + 1) * dim], out).is_err() {
            // members cancel out exactly; fall back to the first member's direction
            let first = run.labels.iter().position(|l| l.0 == c).unwrap_or(0);
            let mut row = x.row(first).to_vec();
            if math::l2_normalize_in_place(&mut row).is_ok() {
                out.copy_from_slice(&row);
            } else {
                out[0] = 1.0;
            }
        }
    }
    let mut centers = EmbeddingMatrix::new(k, dim, center_data)?;
    centers.set_normalized(true);
    let centroids = EmbeddingMatrix::new(k, dim, run.centers.iter().map(|&v| v as f32).collect())?;

    Ok(KmeansResult {
        centroids,
        centers,
        assignment: run.labels.iter().map(|l| l.0).collect(),
        inertia: run.inertia,
        iterations: run.iterations,
        inertia_history: run.history,
    })
}
