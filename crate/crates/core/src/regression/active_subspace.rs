use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::tensor::{CompensatedSum, Matrix};

/// Linear reduction onto the leading eigenvectors of the uncentered gradient
/// covariance `C = mean(grad f grad f^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSubspaceModel {
    pub covariance: Matrix,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `d x k_star`, orthonormal columns.
    pub w_active: Matrix,
}

impl ActiveSubspaceModel {
    pub fn dim(&self) -> usize {
        self.covariance.rows()
    }

    pub fn k_star(&self) -> usize {
        self.w_active.cols()
    }

    /// `z_A = W_A^T x` for each row.
    pub fn project_batch(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.w_active)
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_batch(&Matrix::row_vector(x))?.into_vec())
    }
}

pub fn fit_active_subspace(data: &Dataset, k_star: usize) -> Result<ActiveSubspaceModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    if k_star < 1 || k_star > d {
        return Err(Error::InvalidArgument(format!("k_star {k_star} outside 1..={d}")));
    }
    let n = data.len() as f64;
    let mut c = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s: CompensatedSum = (0..data.len())
                .map(|r| {
                    let g = data.gradient(r);
                    g[i] * g[j]
                })
                .collect();
            c[(i, j)] = s.value() / n;
            c[(j, i)] = c[(i, j)];
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, c.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut w = Matrix::zeros(d, k_star);
    for (col, &i) in order.iter().take(k_star).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            w[(r, col)] = sign * v[r];
        }
    }
    Ok(ActiveSubspaceModel {
        covariance: c,
        eigenvalues,
        w_active: w,
    })
}
