use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::func::MatrixFunction;
use crate::error::Result;

/// Eigendecomposition `S = U diag(λ) Uᵀ` with descending eigenvalues.
///
/// Each eigenvector is signed so that its largest-magnitude component is
/// positive (first such component on ties).
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values[0]
    }

    /// `U diag(g) Uᵀ` for an arbitrary vector of new eigenvalues.
    pub fn reconstruct(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g[j];
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    /// `U f(Λ) Uᵀ`; the caller is responsible for the domain of `f`.
    pub fn map(&self, f: MatrixFunction) -> DMatrix<f64> {
        self.reconstruct(&self.values.map(|l| f.value(l)))
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `max |M[i,j] - M[j,i]|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with input validation.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<EigenPair> {
    super::check_symmetric(m)?;
    Ok(sym_eig_unchecked(m))
}

pub(crate) fn sym_eig_unchecked(m: &DMatrix<f64>) -> EigenPair {
    let n = m.nrows();
    let se = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));

    let values = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = se.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    EigenPair { values, vectors }
}
