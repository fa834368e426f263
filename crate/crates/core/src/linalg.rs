//! Bridges between `ndarray` storage and `nalgebra` decompositions.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

pub(crate) fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; eigenvectors are the columns of the returned matrix.
pub(crate) fn symmetric_eigen_desc(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    // symmetrise to remove rounding asymmetry from accumulated products
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Lower Cholesky factor, retrying with increasing diagonal jitter up to
/// `max_relative_jitter * trace / n`. Returns the factor and the jitter used.
pub(crate) fn cholesky_with_jitter(a: ArrayView2<'_, f64>, max_relative_jitter: f64) -> Option<(Array2<f64>, f64)> {
    let n = a.nrows();
    let mean_diag = (0..n).map(|i| a[[i, i]]).sum::<f64>() / n as f64;
    let base = to_dmatrix(a);
    let mut jitter = 0.0;
    let mut relative = 1e-16;
    loop {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Some((from_dmatrix(&l), jitter));
            }
        }
        if relative > max_relative_jitter * (1.0 + 1e-9) {
            return None;
        }
        jitter = relative * mean_diag;
        relative *= 10.0;
    }
}
