use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::num::Real;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenPairs<T: Real> {
    pub values: DVector<T>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: DMatrix<T>,
}

impl<T: Real> EigenPairs<T> {
    pub fn max(&self) -> T {
        self.values[0]
    }

    pub fn min(&self) -> T {
        self.values[self.values.len() - 1]
    }

    /// Number of eigenvalues above `rel_tol * max(|lambda|)`.
    pub fn numerical_rank(&self, rel_tol: T) -> usize {
        let scale = self.values.iter().fold(T::ZERO, |m, v| m.max(v.abs()));
        if scale == T::ZERO {
            return 0;
        }
        self.values.iter().filter(|&&v| v > rel_tol * scale).count()
    }

    /// `Q diag(f(lambda)) Q^T`.
    pub fn reconstruct_with<F: Fn(T) -> T>(&self, f: F) -> DMatrix<T> {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for (i, &lambda) in self.values.iter().enumerate() {
            let q = self.vectors.column(i);
            out += q * q.transpose() * f(lambda);
        }
        out
    }
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
///
/// The input is symmetrized before decomposition.
pub fn eig_sym<T: Real>(m: &DMatrix<T>) -> EigenPairs<T> {
    assert!(m.is_square(), "eig_sym needs a square matrix");
    let sym = (m + m.transpose()) * T::HALF;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenPairs { values, vectors }
}
