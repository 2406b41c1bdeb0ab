//! Perron pair and the block decomposition `W = [p R] diag(1, Lambda) [q^T; Z^T]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, op_norm};
use crate::weights::{CouplingKind, WeightMatrix};

/// Magnitudes below this are treated as zero eigenvalues.
pub const ZERO_EIGEN_TOL: f64 = 1e-12;

/// Default settings for [`perron_pair`].
pub const PERRON_TOL: f64 = 1e-14;
pub const PERRON_MAX_ITERS: usize = 1_000_000;

/// Right/left Perron eigenvectors with `Wp = p`, `q^T W = q^T`, `q^T p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronPair {
    #[serde(serialize_with = "ser_vec")]
    pub p: DVector<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub q: DVector<f64>,
    pub lambda2_mag: f64,
    pub lambda_n_mag: f64,
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl PerronPair {
    /// The equivalent pair `(c p, q / c)`.
    pub fn rescaled(&self, c: f64) -> Self {
        PerronPair {
            p: &self.p * c,
            q: &self.q / c,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `max(||Wp - p||, ||W^T q - q||)`.
    pub fn residual(&self, w: &WeightMatrix) -> f64 {
        let m = w.matrix();
        let rp = (m * &self.p - &self.p).norm();
        let rq = (m.transpose() * &self.q - &self.q).norm();
        rp.max(rq)
    }
}

/// Eigenvalue magnitudes of `W`, sorted descending.
pub fn eigen_magnitudes(w: &WeightMatrix) -> Vec<f64> {
    linalg::eigen_magnitudes(w.matrix())
}

/// Power iteration from the all-ones vector, rescaled to unit 2-norm each step.
fn power_iterate(m: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<DVector<f64>> {
    let n = m.nrows();
    let mut v = linalg::ones(n) / (n as f64).sqrt();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = m * &v;
        residual = (&next - &v).norm();
        if residual <= tol {
            return Ok(v);
        }
        let norm = next.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical("power iteration collapsed".into()));
        }
        v = next / norm;
    }
    Err(Error::NoConvergence {
        iters: max_iters,
        residual,
    })
}

fn is_proportional_to_ones(v: &DVector<f64>) -> bool {
    let mean = v.mean();
    v.iter().all(|x| ((x - mean) / mean).abs() <= 1e-9)
}

/// Perron pair of a validated weight matrix.
///
/// Canonical scaling: PageRank couplings always get `1^T p = 1` (the scores).
/// Otherwise, when `p` is proportional to the ones vector it is set to
/// exactly `1` and `q` then sums to one; any other `p` sums to one.
pub fn perron_pair(w: &WeightMatrix, tol: f64, max_iters: usize) -> Result<PerronPair> {
    let m = w.matrix();
    let n = m.nrows();
    if n == 0 {
        return Err(Error::graph("empty weight matrix"));
    }
    let mags = linalg::eigen_magnitudes(m);
    if n > 1 && mags[0] - mags[1] <= 1e-10 {
        return Err(Error::assumption(format!(
            "dominant eigenvalue is not simple (|l1| = {}, |l2| = {})",
            mags[0], mags[1]
        )));
    }
    let p_dir = power_iterate(m, tol, max_iters)?;
    let q_dir = power_iterate(&m.transpose(), tol, max_iters)?;
    if p_dir.iter().chain(q_dir.iter()).any(|&x| x <= 0.0) {
        return Err(Error::assumption("Perron eigenvector is not positive"));
    }
    let p = if w.kind() != CouplingKind::Pagerank && is_proportional_to_ones(&p_dir) {
        linalg::ones(n)
    } else {
        &p_dir / p_dir.sum()
    };
    let q = &q_dir / q_dir.dot(&p);
    let (lambda2_mag, lambda_n_mag) = if n > 1 { (mags[1], mags[n - 1]) } else { (0.0, 0.0) };
    Ok(PerronPair {
        p,
        q,
        lambda2_mag,
        lambda_n_mag,
    })
}

/// Perron pair with the crate's default tolerance and iteration budget.
pub fn perron_pair_default(w: &WeightMatrix) -> Result<PerronPair> {
    perron_pair(w, PERRON_TOL, PERRON_MAX_ITERS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub pair: PerronPair,
    /// N x (N-1), orthonormal columns spanning the complement of `q`.
    pub r: DMatrix<f64>,
    /// N x (N-1), with `[q^T; Z^T] = [p R]^{-1}`.
    pub z: DMatrix<f64>,
    /// (N-1) x (N-1) block `Z^T W R`.
    pub lambda: DMatrix<f64>,
}

/// Build `R`, `Z` and `Lambda` for `W`.
pub fn decompose(w: &WeightMatrix, pair: &PerronPair) -> Result<SpectralDecomposition> {
    let m = w.matrix();
    let n = m.nrows();
    if pair.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: pair.len(),
        });
    }
    // Householder reflector sending q/|q| to -e1; its trailing columns are an
    // orthonormal basis of q's orthogonal complement.
    let u = &pair.q / pair.q.norm();
    let mut v = u.clone();
    v[0] += u[0].signum();
    let reflector = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / v.dot(&v));
    let r = reflector.columns(1, n - 1).into_owned();

    let mut basis = DMatrix::zeros(n, n);
    basis.set_column(0, &pair.p);
    basis.columns_mut(1, n - 1).copy_from(&r);
    let svals = basis.singular_values();
    let cond = svals.max() / svals.min();
    if !(cond.is_finite() && cond < 1e12) {
        return Err(Error::Numerical(format!("[p R] is numerically singular (cond {cond:e})")));
    }
    let inverse = basis
        .try_inverse()
        .ok_or_else(|| Error::Numerical("[p R] is singular".into()))?;
    let z = inverse.rows(1, n - 1).transpose();
    let lambda = z.transpose() * m * &r;
    Ok(SpectralDecomposition {
        pair: pair.clone(),
        r,
        z,
        lambda,
    })
}

/// Residuals of the defining constraints of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionResiduals {
    pub zt_r_minus_identity: f64,
    pub zt_p: f64,
    pub rt_q: f64,
    pub reconstruction: f64,
    pub qt_p_minus_one: f64,
}

impl DecompositionResiduals {
    pub fn max(&self) -> f64 {
        [
            self.zt_r_minus_identity,
            self.zt_p,
            self.rt_q,
            self.reconstruction,
            self.qt_p_minus_one,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair.is_empty()
    }

    /// `[p R] diag(1, Lambda) [q^T; Z^T]`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let p = &self.pair.p;
        let q = &self.pair.q;
        p * q.transpose() + &self.r * &self.lambda * self.z.transpose()
    }

    pub fn residuals(&self, w: &WeightMatrix) -> DecompositionResiduals {
        let k = self.len().saturating_sub(1);
        DecompositionResiduals {
            zt_r_minus_identity: op_norm(&(self.z.transpose() * &self.r - DMatrix::identity(k, k))),
            zt_p: (self.z.transpose() * &self.pair.p).norm(),
            rt_q: (self.r.transpose() * &self.pair.q).norm(),
            reconstruction: op_norm(&(w.matrix() - self.reconstruct())),
            qt_p_minus_one: (self.pair.q.dot(&self.pair.p) - 1.0).abs(),
        }
    }

    pub fn norm_r(&self) -> f64 {
        op_norm(&self.r)
    }

    pub fn norm_z(&self) -> f64 {
        op_norm(&self.z)
    }

    /// Magnitudes of the eigenvalues of `Lambda`, descending.
    pub fn lambda_magnitudes(&self) -> Vec<f64> {
        linalg::eigen_magnitudes(&self.lambda)
    }

    /// Debug dump: one row per matrix row, tagged with the matrix name.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("matrix,row,values\n");
        let mut push = |name: &str, m: &DMatrix<f64>| {
            for (r, row) in m.row_iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{name},{r},{}\n", vals.join(";")));
            }
        };
        push("p", &DMatrix::from_row_slice(1, self.len(), self.pair.p.as_slice()));
        push("q", &DMatrix::from_row_slice(1, self.len(), self.pair.q.as_slice()));
        push("R", &self.r);
        push("Z", &self.z);
        push("Lambda", &self.lambda);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DirectedGraph, NodeId};
    use crate::weights::{average_coupling, metropolis_hastings, pagerank_coupling};
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubly_stochastic_pair() {
        let g = DirectedGraph::generate_connected(7, 0.4, 1, true).unwrap();
        let w = metropolis_hastings(&g, 0.5).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        for k in 0..7 {
            assert_eq!(pair.p[k], 1.0);
            assert_abs_diff_eq!(pair.q[k], 1.0 / 7.0, epsilon = 1e-12);
        }
        assert!(pair.residual(&w) < 1e-12);
    }

    #[test]
    fn average_pair_is_degree_weighted() {
        let g = DirectedGraph::generate_connected(8, 0.35, 5, true).unwrap();
        let w = average_coupling(&g, 0.5).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        let deg = g.in_degrees();
        let dsum: usize = deg.iter().sum();
        for (k, &d) in deg.iter().enumerate() {
            assert_eq!(pair.p[k], 1.0);
            assert_abs_diff_eq!(pair.q[k], d as f64 / dsum as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn pagerank_pair_on_cycle() {
        let w = pagerank_coupling(&DirectedGraph::directed_cycle(3), 0.15).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(pair.p[k], 1.0 / 3.0, epsilon = 1e-14);
            assert_abs_diff_eq!(pair.q[k], 1.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(pair.p.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pagerank_pair_sums_to_one() {
        let g = DirectedGraph::generate_connected(6, 0.4, 9, false).unwrap();
        let w = pagerank_coupling(&g, 0.15).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        assert_abs_diff_eq!(pair.p.sum(), 1.0, epsilon = 1e-14);
        for k in 0..6 {
            assert_abs_diff_eq!(pair.q[k], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn identity_is_flagged() {
        let w = WeightMatrix::custom(DMatrix::identity(3, 3), (1..=3).map(NodeId).collect()).unwrap();
        assert_eq!(eigen_magnitudes(&w), vec![1.0, 1.0, 1.0]);
        assert!(matches!(perron_pair_default(&w), Err(Error::Assumption(_))));
    }

    #[test]
    fn triangle_magnitudes() {
        // W = 0.4 I + 0.3 (J - I) = 0.1 I + 0.3 J: eigenvalues 1, 0.1, 0.1
        let w = metropolis_hastings(&DirectedGraph::cycle(3), 0.4).unwrap();
        let mags = eigen_magnitudes(&w);
        assert_abs_diff_eq!(mags[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mags[1], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(mags[2], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn two_node_block() {
        let a = 0.3;
        let m = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, a, 1.0 - a]);
        let w = WeightMatrix::custom(m, vec![NodeId(1), NodeId(2)]).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        let dec = decompose(&w, &pair).unwrap();
        assert_eq!(dec.lambda.shape(), (1, 1));
        assert_abs_diff_eq!(dec.lambda[(0, 0)], 1.0 - 2.0 * a, epsilon = 1e-12);
        assert!(dec.residuals(&w).max() < 1e-12);
    }

    #[test]
    fn rescaling_keeps_constraints() {
        let g = DirectedGraph::generate_connected(5, 0.5, 2, false).unwrap();
        let w = pagerank_coupling(&g, 0.15).unwrap();
        let pair = perron_pair_default(&w).unwrap().rescaled(3.5);
        assert_abs_diff_eq!(pair.q.dot(&pair.p), 1.0, epsilon = 1e-12);
        let dec = decompose(&w, &pair).unwrap();
        assert!(dec.residuals(&w).max() < 1e-10);
    }

    #[test]
    fn lambda_carries_subdominant_spectrum() {
        let g = DirectedGraph::generate_connected(6, 0.5, 4, true).unwrap();
        let w = average_coupling(&g, 0.3).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        let dec = decompose(&w, &pair).unwrap();
        let full = eigen_magnitudes(&w);
        let sub = dec.lambda_magnitudes();
        for (a, b) in full[1..].iter().zip(&sub) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(sub[0], pair.lambda2_mag, epsilon = 1e-9);
    }

    #[test]
    fn unshifted_schur_cycles_are_recovered() {
        // the plain Schur iteration does not converge on this matrix
        let g = DirectedGraph::generate_connected(11, 0.2 + 0.6 * 12.0 / 97.0, 140, false).unwrap();
        let w = average_coupling(&g, 0.5).unwrap();
        assert!(nalgebra::Schur::try_new(w.matrix().clone(), f64::EPSILON, 10_000).is_none());
        let mags = eigen_magnitudes(&w);
        assert_eq!(mags.len(), 11);
        assert_abs_diff_eq!(mags[0], 1.0, epsilon = 1e-12);
        assert!(mags[1] < 1.0);
        let pair = perron_pair_default(&w).unwrap();
        assert!(pair.residual(&w) <= 1e-12);
    }

    #[test]
    fn deterministic() {
        let g = DirectedGraph::generate_connected(9, 0.3, 11, false).unwrap();
        let w = pagerank_coupling(&g, 0.2).unwrap();
        let a = decompose(&w, &perron_pair_default(&w).unwrap()).unwrap();
        let b = decompose(&w, &perron_pair_default(&w).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.to_csv().starts_with("matrix,row,values\np,0,"));
    }
}
