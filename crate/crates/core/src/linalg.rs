// Thin wrappers over faer for the dense kernels we need.

use faer::complex_native::c64;
use faer::{Mat, Side};
use num_complex::Complex64;

#[inline]
pub(crate) fn to_faer(z: Complex64) -> c64 {
    c64::new(z.re, z.im)
}

#[inline]
pub(crate) fn from_faer(z: c64) -> Complex64 {
    Complex64::new(z.re, z.im)
}

/// Column-major complex matrix from a row-major closure.
pub(crate) fn complex_mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Mat<c64> {
    Mat::from_fn(rows, cols, |i, j| to_faer(f(i, j)))
}

pub(crate) fn largest_singular_value(m: &Mat<c64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().into_iter().fold(0.0, f64::max)
}

/// Eigenvalues ascending with eigenvectors as columns.
pub(crate) fn hermitian_eigh(m: &Mat<c64>) -> (Vec<f64>, Mat<c64>) {
    let evd = m.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let vals = (0..s.nrows()).map(|i| s.read(i).re).collect();
    (vals, evd.u().to_owned())
}

pub(crate) fn symmetric_eigh(m: &Mat<f64>) -> (Vec<f64>, Mat<f64>) {
    let evd = m.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let vals = (0..s.nrows()).map(|i| s.read(i)).collect();
    (vals, evd.u().to_owned())
}
