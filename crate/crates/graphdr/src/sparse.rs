//! Compressed-sparse-row adjacency for undirected graphs.

use rayon::prelude::*;

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;

/// CSR adjacency over `n` nodes. Column indices are strictly increasing within
/// each row and the pattern is symmetric (undirected graph).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        SparseAdjacency {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from explicit (row, col, value) entries. Entries are sorted and
    /// deduplicated (last value wins); the symmetric-pattern invariant is the
    /// caller's responsibility and is checked.
    pub fn from_entries(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, _) in &entries {
            if i >= n || j >= n {
                return Err(GraphDrError::InvalidArgument {
                    context: "SparseAdjacency::from_entries",
                    message: format!("entry ({i},{j}) out of range for n={n}"),
                });
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        entries.dedup_by(|a, b| {
            if a.0 == b.0 && a.1 == b.1 {
                b.2 = a.2;
                true
            } else {
                false
            }
        });
        let mut row_offsets = vec![0usize; n + 1];
        for &(i, _, _) in &entries {
            row_offsets[i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = entries.iter().map(|&(_, j, _)| j).collect();
        let values = entries.iter().map(|&(_, _, v)| v).collect();
        let adj = SparseAdjacency {
            n,
            row_offsets,
            col_indices,
            values,
        };
        adj.check_symmetric_pattern()?;
        Ok(adj)
    }

    /// Build from undirected edges with unit weight; both directions are
    /// inserted, duplicates collapse, self-loops are dropped.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            if i == j {
                continue;
            }
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        Self::from_entries(n, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// (column, value) pairs of row i, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of stored entries in row i.
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    fn check_symmetric_pattern(&self) -> Result<()> {
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if self.get(j, i) == 0.0 && self.get(i, j) != 0.0 {
                    // entry (j,i) missing entirely?
                    let lo = self.row_offsets[j];
                    let hi = self.row_offsets[j + 1];
                    if self.col_indices[lo..hi].binary_search(&i).is_err() {
                        return Err(GraphDrError::InvalidArgument {
                            context: "SparseAdjacency",
                            message: format!("pattern not symmetric at ({i},{j})"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// True when values (not just the pattern) are symmetric within tol.
    pub fn is_symmetric_values(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// Return a copy with unit self-loops inserted (existing diagonal kept).
    pub fn with_self_loops(&self) -> SparseAdjacency {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            if self.get(i, i) == 0.0
                && !self.row(i).any(|(j, _)| j == i)
            {
                entries.push((i, i, 1.0));
            }
            for (j, v) in self.row(i) {
                entries.push((i, j, v));
            }
        }
        SparseAdjacency::from_entries(self.n, entries).expect("self-loop insertion keeps symmetry")
    }

    /// Sparse-dense product `A * h`; rows of the output are independent.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n != h.rows() {
            return Err(GraphDrError::ShapeMismatch {
                op: "spmm",
                left: format!("{}x{}", self.n, self.n),
                right: format!("{}x{}", h.rows(), h.cols()),
            });
        }
        let cols = h.cols();
        let mut out = DenseMatrix::zeros(self.n, cols);
        let work = self.nnz() * cols;
        let body = |(i, out_row): (usize, &mut [f64])| {
            for (j, v) in self.row(i) {
                let src = h.row(j);
                for (o, &s) in out_row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        };
        if work >= (1 << 20) {
            out.data_mut()
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(body);
        } else {
            out.data_mut().chunks_mut(cols).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `A^T * g`, used by reverse-mode differentiation through [`spmm`].
    /// Scatter order is fixed, so the result is deterministic.
    pub fn spmm_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n != g.rows() {
            return Err(GraphDrError::ShapeMismatch {
                op: "spmm_transpose",
                left: format!("{}x{}", self.n, self.n),
                right: format!("{}x{}", g.rows(), g.cols()),
            });
        }
        let cols = g.cols();
        let mut out = DenseMatrix::zeros(self.n, cols);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let g_row = i * cols..(i + 1) * cols;
                let (g_slice, out_slice) = (g.data(), out.data_mut());
                for (k, gi) in g_slice[g_row].iter().enumerate() {
                    out_slice[j * cols + k] += v * gi;
                }
            }
        }
        Ok(out)
    }

    /// Materialize as a dense matrix (test oracle helper).
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }
}
