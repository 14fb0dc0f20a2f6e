//! Principal component analysis via covariance eigendecomposition.

use crate::eigen::eigh_symmetric;
use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;

/// Fitted PCA basis: feature means, top-k orthonormal components (columns),
/// and their eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DenseMatrix,
    pub components: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    /// Trace of the covariance matrix (total variance).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn d(&self) -> usize {
        self.components.rows()
    }

    /// Fraction of total variance captured by each kept component.
    pub fn explained_variance_ratios(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues
            .iter()
            .map(|&l| (l / self.total_variance).max(0.0))
            .collect()
    }
}

/// Mean-center, form the d x d covariance X_c^T X_c / (n-1), eigendecompose,
/// keep the k eigenpairs with the largest eigenvalues.
pub fn pca_fit(x: &DenseMatrix, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(GraphDrError::InvalidArgument {
            context: "pca_fit",
            message: format!("need at least 2 samples, got {n}"),
        });
    }
    if k > d.min(n - 1) {
        return Err(GraphDrError::InvalidArgument {
            context: "pca_fit",
            message: format!("k={k} exceeds min(n-1, d)={}", d.min(n - 1)),
        });
    }

    let mean = x.col_mean();
    let mut centered = x.clone();
    for i in 0..n {
        for (v, &m) in centered.row_mut(i).iter_mut().zip(mean.row(0)) {
            *v -= m;
        }
    }
    // X_c^T X_c accumulates entries (i,j) and (j,i) in the same index order,
    // so the product is exactly symmetric.
    let cov = centered
        .transpose()
        .matmul(&centered)?
        .scale(1.0 / (n - 1) as f64);
    let total_variance: f64 = (0..d).map(|i| cov.get(i, i)).sum();

    let (eigenvalues, vectors) = eigh_symmetric(&cov)?;
    let kept: Vec<f64> = eigenvalues[..k].to_vec();
    if let Some(&smallest) = kept.last() {
        let scale = kept.first().copied().unwrap_or(0.0).abs().max(1.0);
        if smallest < -1e-9 * scale {
            return Err(GraphDrError::NonFinite { op: "pca_fit" });
        }
    }
    let mut components = DenseMatrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            components.set(i, j, vectors.get(i, j));
        }
    }

    Ok(PcaModel {
        mean,
        components,
        eigenvalues: kept,
        total_variance,
    })
}

/// Project rows into the component basis: y = (x - mean) A_k.
pub fn pca_transform(model: &PcaModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != model.d() {
        return Err(GraphDrError::ShapeMismatch {
            op: "pca_transform",
            left: format!("{}x{}", x.rows(), x.cols()),
            right: format!("model d={}", model.d()),
        });
    }
    let mut centered = x.clone();
    for i in 0..x.rows() {
        for (v, &m) in centered.row_mut(i).iter_mut().zip(model.mean.row(0)) {
            *v -= m;
        }
    }
    centered.matmul(&model.components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
            .unwrap()
    }

    #[test]
    fn low_rank_data_has_vanishing_residual_eigenvalues() {
        let mut rng = Rng::new(51);
        let z = random_matrix(&mut rng, 50, 5);
        let b = random_matrix(&mut rng, 5, 20);
        let x = z.matmul(&b).unwrap(); // rank <= 5 in 20 dims
        let model = pca_fit(&x, 10).unwrap();
        let top = model.eigenvalues[0];
        for &residual in &model.eigenvalues[5..] {
            assert!(
                residual.abs() < 1e-8 * top,
                "residual {residual} vs top {top}"
            );
        }
    }

    #[test]
    fn isotropic_cross_has_equal_eigenvalues() {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let model = pca_fit(&x, 2).unwrap();
        assert!((model.eigenvalues[0] - model.eigenvalues[1]).abs() < 1e-12);
        assert!((model.eigenvalues[0] - 2.0 / 3.0).abs() < 1e-12);
        // components orthonormal
        let ata = model
            .components
            .transpose()
            .matmul(&model.components)
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ata.get(i, j) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalue_sum_equals_total_variance() {
        let mut rng = Rng::new(53);
        let x = random_matrix(&mut rng, 50, 10);
        let model = pca_fit(&x, 10).unwrap();
        let sum: f64 = model.eigenvalues.iter().sum();
        assert!((sum - model.total_variance).abs() < 1e-9);
        let ratios = model.explained_variance_ratios();
        assert!(ratios.iter().all(|&r| (0.0..=1.0).contains(&r)));
        assert!(ratios.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn transform_of_mean_row_is_zero() {
        let mut rng = Rng::new(55);
        let x = random_matrix(&mut rng, 30, 6);
        let model = pca_fit(&x, 3).unwrap();
        let y = pca_transform(&model, &model.mean).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_transform_is_an_isometry() {
        let mut rng = Rng::new(57);
        let x = random_matrix(&mut rng, 25, 8);
        let model = pca_fit(&x, 8).unwrap();
        let y = pca_transform(&model, &x).unwrap();
        for i in 0..25 {
            for j in (i + 1)..25 {
                let dx = x.row_dist_sq(i, j).sqrt();
                let dy = y.row_dist_sq(i, j).sqrt();
                assert!((dx - dy).abs() < 1e-9, "distance {dx} became {dy}");
            }
        }
    }

    #[test]
    fn k_too_large_is_rejected() {
        let mut rng = Rng::new(59);
        let x = random_matrix(&mut rng, 5, 10);
        // k bounded by n-1 = 4
        assert!(pca_fit(&x, 5).is_err());
        assert!(pca_fit(&x, 4).is_ok());
    }

    #[test]
    fn single_sample_is_rejected() {
        let x = DenseMatrix::zeros(1, 4);
        assert!(pca_fit(&x, 1).is_err());
    }
}
