//! t-distributed stochastic neighbor embedding with exact O(n^2) similarities.
//!
//! Per-point bandwidths are calibrated by binary search so each conditional
//! distribution hits the requested perplexity; the joint P is the symmetrized
//! average. The embedding minimizes KL(P || Q) with a Student-t kernel in the
//! low-dimensional space, gradient descent with momentum, early exaggeration,
//! and a PCA initialization scaled to tiny spread.

use crate::dimred::pca::{pca_fit, pca_transform};
use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub dims: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 40.0,
            dims: 2,
            learning_rate: 200.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Embedding plus the KL divergence at the first and last iterate (both
/// measured against the plain, unexaggerated P).
#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: DenseMatrix,
    pub initial_kl: f64,
    pub final_kl: f64,
}

const CALIBRATION_ITERS: usize = 50;
const PERPLEXITY_TOL: f64 = 1e-4;

fn pairwise_sq_distances(x: &DenseMatrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = x.row_dist_sq(i, j);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional row p_{.|i} for one beta; returns (row, Shannon entropy in
/// nats).
fn conditional_row(dist_row: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = dist_row.len();
    let mut min_d = f64::INFINITY;
    for (j, &d) in dist_row.iter().enumerate() {
        if j != i {
            min_d = min_d.min(d);
        }
    }
    let mut sum = 0.0;
    for (j, &d) in dist_row.iter().enumerate() {
        if j == i {
            out[j] = 0.0;
        } else {
            // shift by the minimum distance to avoid underflow at large beta
            let v = (-beta * (d - min_d)).exp();
            out[j] = v;
            sum += v;
        }
    }
    if sum <= 0.0 || !sum.is_finite() {
        // degenerate row; fall back to uniform
        let uniform = 1.0 / (n - 1) as f64;
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = if j == i { 0.0 } else { uniform };
        }
        return ((n - 1) as f64).ln();
    }
    let mut entropy = 0.0;
    for slot in out.iter_mut() {
        *slot /= sum;
        if *slot > 0.0 {
            entropy -= *slot * slot.ln();
        }
    }
    entropy
}

/// Binary search the precision beta_i = 1/(2 sigma_i^2) so the conditional
/// perplexity exp(H) matches the target within tolerance, capped at 50 steps.
fn calibrate_row(dist_row: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let mut beta = 1.0;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    for _ in 0..CALIBRATION_ITERS {
        let entropy = conditional_row(dist_row, i, beta, out);
        let perp = entropy.exp();
        let diff = perp - perplexity;
        if diff.abs() < PERPLEXITY_TOL {
            return;
        }
        if diff > 0.0 {
            // too many effective neighbors: sharpen
            beta_min = beta;
            beta = if beta_max.is_infinite() {
                beta * 2.0
            } else {
                (beta + beta_max) / 2.0
            };
        } else {
            beta_max = beta;
            beta = if beta_min.is_infinite() {
                beta / 2.0
            } else {
                (beta + beta_min) / 2.0
            };
        }
    }
    // cap reached (possible when all distances are equal); keep the last row
    conditional_row(dist_row, i, beta, out);
}

/// Symmetrized joint probabilities p_ij = (p_{j|i} + p_{i|j}) / 2n.
/// Depends only on pairwise distances, so it is translation invariant.
pub fn joint_probabilities(x: &DenseMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = x.rows();
    if perplexity >= (n - 1) as f64 || perplexity <= 0.0 {
        return Err(GraphDrError::InvalidArgument {
            context: "tsne",
            message: format!("perplexity {perplexity} infeasible for n={n}"),
        });
    }
    let dist = pairwise_sq_distances(x);
    let mut cond = vec![0.0; n * n];
    {
        let mut row = vec![0.0; n];
        for i in 0..n {
            calibrate_row(&dist[i * n..(i + 1) * n], i, perplexity, &mut row);
            cond[i * n..(i + 1) * n].copy_from_slice(&row);
        }
    }
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    Ok(p)
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(1e-300)).ln())
        .sum()
}

/// Student-t similarities of the current embedding: returns (q, w) where w is
/// the unnormalized kernel and q sums to 1 over ordered pairs.
fn student_t(y: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.rows();
    let mut w = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + y.row_dist_sq(i, j));
            w[i * n + j] = v;
            w[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    let q: Vec<f64> = w.iter().map(|&v| v / sum).collect();
    (q, w)
}

/// Embed rows of x into cfg.dims dimensions.
pub fn tsne_embed(x: &DenseMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    if n < 5 {
        return Err(GraphDrError::InvalidArgument {
            context: "tsne",
            message: format!("need at least 5 points, got {n}"),
        });
    }
    if !(cfg.dims == 2 || cfg.dims == 3) {
        return Err(GraphDrError::InvalidArgument {
            context: "tsne",
            message: format!("output dims must be 2 or 3, got {}", cfg.dims),
        });
    }
    if x.cols() < cfg.dims {
        return Err(GraphDrError::InvalidArgument {
            context: "tsne",
            message: format!("input dim {} below output dims {}", x.cols(), cfg.dims),
        });
    }

    let p = joint_probabilities(x, cfg.perplexity)?;

    // PCA initialization, rescaled so the first column has std 1e-4
    let mut rng = Rng::new(cfg.seed);
    let mut y = match pca_fit(x, cfg.dims) {
        Ok(model) => pca_transform(&model, x)?,
        Err(_) => {
            // degenerate input (e.g. zero variance): tiny random start
            let data = (0..n * cfg.dims).map(|_| rng.normal() * 1e-4).collect();
            DenseMatrix::from_vec(n, cfg.dims, data)?
        }
    };
    let col0_std = {
        let mean: f64 = (0..n).map(|i| y.get(i, 0)).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (y.get(i, 0) - mean).powi(2)).sum::<f64>() / n as f64;
        var.sqrt()
    };
    if col0_std > 0.0 {
        y = y.scale(1e-4 / col0_std);
    } else {
        let data = (0..n * cfg.dims).map(|_| rng.normal() * 1e-4).collect();
        y = DenseMatrix::from_vec(n, cfg.dims, data)?;
    }

    let initial_kl = {
        let (q, _) = student_t(&y);
        kl_divergence(&p, &q)
    };

    let dims = cfg.dims;
    let mut velocity = DenseMatrix::zeros(n, dims);
    let mut grad = DenseMatrix::zeros(n, dims);

    for iter in 0..cfg.iterations {
        let exaggerate = if iter < cfg.exaggeration_iters {
            cfg.exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_early
        } else {
            cfg.momentum_late
        };

        let (q, w) = student_t(&y);
        grad.data_mut().fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coeff = 4.0 * (exaggerate * p[i * n + j] - q[i * n + j]) * w[i * n + j];
                for d in 0..dims {
                    let delta = y.get(i, d) - y.get(j, d);
                    *grad
                        .row_mut(i)
                        .get_mut(d)
                        .expect("dims in range") += coeff * delta;
                }
            }
        }

        for idx in 0..n * dims {
            let v = momentum * velocity.data()[idx] - cfg.learning_rate * grad.data()[idx];
            velocity.data_mut()[idx] = v;
            y.data_mut()[idx] += v;
        }
        // re-center to keep the embedding bounded
        let mean = y.col_mean();
        for i in 0..n {
            for (v, &m) in y.row_mut(i).iter_mut().zip(mean.row(0)) {
                *v -= m;
            }
        }
        if !y.is_finite() {
            return Err(GraphDrError::NonFinite { op: "tsne_embed" });
        }
    }

    let final_kl = {
        let (q, _) = student_t(&y);
        kl_divergence(&p, &q)
    };

    Ok(TsneResult {
        embedding: y,
        initial_kl,
        final_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::silhouette;

    fn blobs(rng: &mut Rng, per_blob: usize, dims: usize, sep: f64) -> (DenseMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for b in 0..2 {
            for _ in 0..per_blob {
                let mut row = vec![0.0; dims];
                for slot in row.iter_mut() {
                    *slot = rng.normal();
                }
                row[0] += b as f64 * sep;
                rows.push(row);
                labels.push(b);
            }
        }
        (DenseMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn joint_probabilities_sum_to_one_and_are_symmetric() {
        let mut rng = Rng::new(61);
        let (x, _) = blobs(&mut rng, 15, 6, 4.0);
        let n = x.rows();
        let p = joint_probabilities(&x, 10.0).unwrap();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..n {
            for j in 0..n {
                assert!((p[i * n + j] - p[j * n + i]).abs() < 1e-15);
                assert!(p[i * n + j] >= 0.0);
            }
        }
    }

    #[test]
    fn equidistant_simplex_rows_stay_uniform() {
        // regular 4-simplex: 5 points, all pairwise distances equal
        let mut x = DenseMatrix::zeros(5, 5);
        for i in 0..5 {
            x.set(i, i, 1.0);
        }
        let p = joint_probabilities(&x, 3.0).unwrap();
        // every off-diagonal entry equals 1/(n*(n-1))
        let expect = 1.0 / 20.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!((p[i * 5 + j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn infeasible_perplexity_is_rejected() {
        let x = DenseMatrix::zeros(5, 2);
        assert!(joint_probabilities(&x, 4.0).is_err());
        assert!(joint_probabilities(&x, -1.0).is_err());
    }

    #[test]
    fn translation_leaves_p_unchanged() {
        let mut rng = Rng::new(63);
        let (x, _) = blobs(&mut rng, 10, 4, 3.0);
        let shifted = x.map(|v| v + 71.25);
        let p1 = joint_probabilities(&x, 8.0).unwrap();
        let p2 = joint_probabilities(&shifted, 8.0).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_embed_with_improving_kl_and_separation() {
        let mut rng = Rng::new(65);
        let (x, labels) = blobs(&mut rng, 20, 10, 12.0);
        let cfg = TsneConfig {
            perplexity: 10.0,
            seed: 1,
            ..TsneConfig::default()
        };
        let result = tsne_embed(&x, &cfg).unwrap();
        assert!(
            result.final_kl <= result.initial_kl,
            "KL rose: {} -> {}",
            result.initial_kl,
            result.final_kl
        );
        assert_eq!(result.embedding.shape(), (40, 2));
        let s = silhouette(&result.embedding, &labels).unwrap();
        assert!(s > 0.5, "silhouette {s}");
    }

    #[test]
    fn same_seed_same_embedding() {
        let mut rng = Rng::new(67);
        let (x, _) = blobs(&mut rng, 8, 5, 6.0);
        let cfg = TsneConfig {
            perplexity: 5.0,
            iterations: 50,
            seed: 9,
            ..TsneConfig::default()
        };
        let a = tsne_embed(&x, &cfg).unwrap();
        let b = tsne_embed(&x, &cfg).unwrap();
        assert_eq!(a.embedding, b.embedding);
    }

    #[test]
    fn too_few_points_rejected() {
        let x = DenseMatrix::zeros(4, 3);
        assert!(tsne_embed(&x, &TsneConfig::default()).is_err());
    }
}
