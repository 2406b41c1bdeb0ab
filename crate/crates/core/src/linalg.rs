//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, Schur};

/// Induced 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

const SCHUR_MAX_ITERS: usize = 10_000;

/// Eigenvalues through a bounded real Schur iteration.
///
/// nalgebra's `complex_eigenvalues` iterates without limit and can cycle on
/// some highly structured matrices (stochastic matrices with exact rational
/// entries among them). On non-convergence we retry on the transpose and on
/// shifted copies, all of which share the spectrum up to the known shift.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for (transpose, shift) in [(false, 0.0), (true, 0.0), (false, 0.3), (true, -0.37), (false, 0.61)] {
        let mut a = if transpose { m.transpose() } else { m.clone() };
        let c = shift * scale;
        for i in 0..n {
            a[(i, i)] += c;
        }
        if let Some(schur) = Schur::try_new(a, f64::EPSILON, SCHUR_MAX_ITERS) {
            return schur.complex_eigenvalues().iter().map(|z| z - c).collect();
        }
    }
    panic!("real Schur iteration failed to converge on a {n}x{n} matrix");
}

/// Eigenvalue magnitudes, sorted descending.
pub fn eigen_magnitudes(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut mags: Vec<f64> = eigenvalues(m).iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigen_magnitudes(m).first().copied().unwrap_or(0.0)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * roots * eig.eigenvectors.transpose()
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
