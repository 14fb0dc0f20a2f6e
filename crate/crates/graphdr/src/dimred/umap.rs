//! Uniform manifold approximation and projection, exact-neighbor variant.
//!
//! Pipeline: exact k-nearest-neighbor graph (Euclidean), per-point bandwidth
//! calibration against log2(k), fuzzy union of the directed memberships, and
//! per-edge stochastic descent on the cross-entropy objective with negative
//! sampling of the repulsive term. The low-dimensional kernel
//! w(d) = (1 + a d^(2b))^-1 has (a, b) fitted by least squares to the
//! min_dist step curve.

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct UmapConfig {
    pub n_neighbors: usize,
    pub dims: usize,
    pub min_dist: f64,
    pub epochs: usize,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for UmapConfig {
    fn default() -> Self {
        UmapConfig {
            n_neighbors: 15,
            dims: 2,
            min_dist: 0.1,
            epochs: 500,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl UmapConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Exact k nearest neighbors per row (self excluded), ties broken by index.
/// Returns (indices, distances), each n x k.
pub fn exact_knn(x: &DenseMatrix, k: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<f64>>)> {
    let n = x.rows();
    if k < 2 || k >= n {
        return Err(GraphDrError::InvalidArgument {
            context: "umap",
            message: format!("n_neighbors {k} outside [2, {n})"),
        });
    }
    let mut indices = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (x.row_dist_sq(i, j).sqrt(), j))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        indices.push(all[..k].iter().map(|&(_, j)| j).collect());
        dists.push(all[..k].iter().map(|&(d, _)| d).collect());
    }
    Ok((indices, dists))
}

/// Per-point bandwidth: binary search sigma so that
/// sum_j exp(-max(0, d_ij - rho_i) / sigma) = log2(k).
fn smooth_knn_sigma(dists: &[f64], rho: f64, k: usize) -> f64 {
    let target = (k as f64).log2();
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut mid = 1.0f64;
    for _ in 0..64 {
        let sum: f64 = dists
            .iter()
            .map(|&d| (-( (d - rho).max(0.0) ) / mid).exp())
            .sum();
        if (sum - target).abs() < 1e-5 {
            break;
        }
        if sum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    mid
}

/// Fuzzy neighborhood graph: undirected edges (i, j, v_ij) with
/// v_ij = v_j|i + v_i|j - v_j|i * v_i|j, plus the directed memberships.
pub struct FuzzyGraph {
    pub edges: Vec<(usize, usize, f64)>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn fuzzy_graph(x: &DenseMatrix, k: usize) -> Result<FuzzyGraph> {
    let n = x.rows();
    let (indices, dists) = exact_knn(x, k)?;
    let rho: Vec<f64> = dists.iter().map(|d| d[0]).collect();
    let sigma: Vec<f64> = (0..n)
        .map(|i| smooth_knn_sigma(&dists[i], rho[i], k))
        .collect();

    // directed memberships
    let mut directed: std::collections::HashMap<(usize, usize), f64> =
        std::collections::HashMap::new();
    for i in 0..n {
        for (pos, &j) in indices[i].iter().enumerate() {
            let d = dists[i][pos];
            let v = (-((d - rho[i]).max(0.0)) / sigma[i]).exp();
            directed.insert((i, j), v);
        }
    }
    // fuzzy union; iterate in deterministic order
    let mut edges = Vec::new();
    for i in 0..n {
        for &j in &indices[i] {
            if j < i && directed.contains_key(&(j, i)) {
                continue; // handled from the other side
            }
            let a = directed.get(&(i, j)).copied().unwrap_or(0.0);
            let b = directed.get(&(j, i)).copied().unwrap_or(0.0);
            let v = a + b - a * b;
            let (lo, hi) = (i.min(j), i.max(j));
            edges.push((lo, hi, v));
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges.dedup_by_key(|e| (e.0, e.1));
    Ok(FuzzyGraph { edges, rho, sigma })
}

/// Least-squares fit of (a, b) so that (1 + a d^(2b))^-1 approximates the
/// step curve: 1 for d <= min_dist, exp(-(d - min_dist)) beyond it.
pub fn fit_ab(min_dist: f64) -> (f64, f64) {
    let grid: Vec<f64> = (0..300).map(|i| i as f64 * 3.0 / 299.0).collect();
    let target: Vec<f64> = grid
        .iter()
        .map(|&d| {
            if d <= min_dist {
                1.0
            } else {
                (-(d - min_dist)).exp()
            }
        })
        .collect();

    let mut a = 1.5f64;
    let mut b = 1.0f64;
    let mut lambda = 1e-3; // Levenberg damping
    let residual_norm = |a: f64, b: f64| -> f64 {
        grid.iter()
            .zip(&target)
            .map(|(&d, &t)| {
                let w = 1.0 / (1.0 + a * d.powf(2.0 * b));
                (w - t) * (w - t)
            })
            .sum()
    };
    let mut best = residual_norm(a, b);
    for _ in 0..200 {
        // accumulate J^T J and J^T r for the 2-parameter problem
        let (mut jaa, mut jab, mut jbb, mut ja_r, mut jb_r) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&d, &t) in grid.iter().zip(&target) {
            let td = if d > 0.0 { d.powf(2.0 * b) } else { 0.0 };
            let w = 1.0 / (1.0 + a * td);
            let r = w - t;
            let dw_da = -td * w * w;
            let dw_db = if d > 0.0 {
                -a * td * (d * d).ln() * w * w
            } else {
                0.0
            };
            jaa += dw_da * dw_da;
            jab += dw_da * dw_db;
            jbb += dw_db * dw_db;
            ja_r += dw_da * r;
            jb_r += dw_db * r;
        }
        let (m11, m12, m22) = (jaa * (1.0 + lambda), jab, jbb * (1.0 + lambda));
        let det = m11 * m22 - m12 * m12;
        if det.abs() < 1e-18 {
            break;
        }
        let da = -(m22 * ja_r - m12 * jb_r) / det;
        let db = -(-m12 * ja_r + m11 * jb_r) / det;
        let (na, nb) = ((a + da).max(1e-3), (b + db).clamp(0.1, 5.0));
        let trial = residual_norm(na, nb);
        if trial < best {
            a = na;
            b = nb;
            best = trial;
            lambda = (lambda * 0.5).max(1e-9);
        } else {
            lambda *= 4.0;
            if lambda > 1e6 {
                break;
            }
        }
    }
    (a, b)
}

const GRAD_CLIP: f64 = 4.0;

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Embed rows of x into cfg.dims dimensions.
pub fn umap_embed(x: &DenseMatrix, cfg: &UmapConfig) -> Result<DenseMatrix> {
    let n = x.rows();
    if cfg.n_neighbors >= n {
        return Err(GraphDrError::InvalidArgument {
            context: "umap",
            message: format!("n_neighbors {} must be < n={n}", cfg.n_neighbors),
        });
    }
    let graph = fuzzy_graph(x, cfg.n_neighbors)?;
    let mut rng = Rng::new(cfg.seed);
    let dims = cfg.dims;

    let mut y = DenseMatrix::from_vec(
        n,
        dims,
        (0..n * dims).map(|_| rng.uniform_in(-10.0, 10.0)).collect(),
    )?;

    let (a, b) = fit_ab(cfg.min_dist);

    let max_w = graph
        .edges
        .iter()
        .map(|&(_, _, v)| v)
        .fold(0.0f64, f64::max);
    if max_w <= 0.0 {
        return Ok(y);
    }
    // edge e is visited every (max_w / w_e) epochs; negatives at rate/visit
    let eps: Vec<f64> = graph.edges.iter().map(|&(_, _, v)| max_w / v.max(1e-12)).collect();
    let mut next_sample: Vec<f64> = eps.clone();
    let eps_neg: Vec<f64> = eps
        .iter()
        .map(|e| e / cfg.negative_sample_rate as f64)
        .collect();
    let mut next_neg: Vec<f64> = eps_neg.clone();

    for epoch in 1..=cfg.epochs {
        let alpha = cfg.learning_rate * (1.0 - (epoch - 1) as f64 / cfg.epochs as f64);
        let epoch_f = epoch as f64;
        for (e, &(i, j, _)) in graph.edges.iter().enumerate() {
            if next_sample[e] > epoch_f {
                continue;
            }
            next_sample[e] += eps[e];

            // attraction along the edge
            let d_sq = y.row_dist_sq(i, j);
            if d_sq > 0.0 {
                let coeff = (-2.0 * a * b * d_sq.powf(b - 1.0)) / (1.0 + a * d_sq.powf(b));
                for d in 0..dims {
                    let g = clip(coeff * (y.get(i, d) - y.get(j, d)));
                    let step = alpha * g;
                    y.set(i, d, y.get(i, d) + step);
                    y.set(j, d, y.get(j, d) - step);
                }
            }

            // negative samples repel i from random nodes
            let n_negs = ((epoch_f - next_neg[e]) / eps_neg[e]).floor().max(0.0) as usize + 1;
            for _ in 0..n_negs {
                let kx = rng.below(n);
                if kx == i || kx == j {
                    continue;
                }
                let d_sq = y.row_dist_sq(i, kx);
                let coeff = (2.0 * b) / ((0.001 + d_sq) * (1.0 + a * d_sq.powf(b)));
                for d in 0..dims {
                    let diff = y.get(i, d) - y.get(kx, d);
                    let g = if coeff > 0.0 { clip(coeff * diff) } else { GRAD_CLIP };
                    y.set(i, d, y.get(i, d) + alpha * g);
                }
            }
            next_neg[e] += n_negs as f64 * eps_neg[e];
        }
        if !y.is_finite() {
            return Err(GraphDrError::NonFinite { op: "umap_embed" });
        }
    }
    Ok(y)
}
