//! Contraction certificates, analytic `K^min` constants and trace reports.
//!
//! Everything here is a pure function of immutable inputs, so independent
//! reports can be computed from different threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::linalg::{op_norm, spectral_radius, sym_max_eigenvalue, sym_min_eigenvalue, sym_sqrt};
use crate::sim::{self, apply_dynamics, common_bound, common_lipschitz, NodeDynamics, Scenario, SimulationTrace};
use crate::spectral::{SpectralDecomposition, ZERO_EIGEN_TOL};

/// Default floor for contraction rates and default `gamma` tolerance.
pub const GAMMA_TOL: f64 = 1e-12;

/// Tail window: this fraction of the horizon, at least [`MIN_TAIL_STEPS`].
pub const DEFAULT_TAIL_FRACTION: f64 = 0.25;
pub const MIN_TAIL_STEPS: i64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Proven for an affine blended map.
    Analytic,
    /// Finite-difference Jacobians on a grid; evidence, not proof.
    Sampled,
}

/// `J^T H^2 J <= gamma H^2` for the blended Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCertificate {
    pub h: DMatrix<f64>,
    pub gamma: f64,
    pub kind: CertificateKind,
}

impl ContractionCertificate {
    pub fn sqrt_gamma(&self) -> f64 {
        self.gamma.sqrt()
    }

    pub fn is_contractive(&self) -> bool {
        self.gamma < 1.0
    }

    pub fn evidence_only(&self) -> bool {
        self.kind == CertificateKind::Sampled
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn norm_h(&self) -> f64 {
        op_norm(&self.h)
    }

    pub fn h_inverse(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.h)
    }

    pub fn norm_h_inv(&self) -> Result<f64> {
        Ok(op_norm(&self.h_inverse()?))
    }
}

fn invert_spd(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lo = sym_min_eigenvalue(h);
    let hi = sym_max_eigenvalue(h);
    if !(lo > 1e-14 * hi.max(1e-300)) {
        return Err(Error::Numerical(format!("H is singular or indefinite (eigenvalues in [{lo:e}, {hi:e}])")));
    }
    h.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("H is singular".into()))
}

/// `gamma(H) = ||H A H^-1||^2`.
fn rate_for(a: &DMatrix<f64>, h: &DMatrix<f64>) -> Option<f64> {
    let hinv = h.clone().try_inverse()?;
    let g = op_norm(&(h * a * hinv)).powi(2);
    g.is_finite().then_some(g)
}

/// Solve the Stein equation `P - B^T P B = I` through its Kronecker form.
fn stein(b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = b.nrows();
    let bt = b.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - bt.kronecker(&bt);
    let rhs = DVector::from_iterator(n * n, DMatrix::<f64>::identity(n, n).iter().copied());
    let vec_p = lhs.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

/// Certificate for the affine blended map `s -> A s + b`.
///
/// Candidate metrics are `H = I` and `H = P^{1/2}` with `P` the Stein solution
/// for `A / r` over a spread of radii `r` in `(rho(A), 1)`; the candidate with
/// the smallest `gamma` wins. `H` is scaled so that its largest eigenvalue is 1.
pub fn contraction_affine(a: &DMatrix<f64>, tol: f64) -> Result<ContractionCertificate> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.ncols(),
        });
    }
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::NotContractive { gamma: rho * rho });
    }
    let identity = DMatrix::<f64>::identity(n, n);
    let mut best_h = identity.clone();
    let mut best = rate_for(a, &identity).unwrap_or(f64::INFINITY);
    for f in [1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 0.9, 0.99] {
        let r = rho + (1.0 - rho) * f;
        let Some(p) = stein(&(a / r)) else { continue };
        if !(sym_min_eigenvalue(&p) > 0.0) {
            continue;
        }
        let mut h = sym_sqrt(&p);
        h /= sym_max_eigenvalue(&h);
        if let Some(g) = rate_for(a, &h) {
            if g < best {
                best = g;
                best_h = h;
            }
        }
    }
    if !(best < 1.0) {
        return Err(Error::Numerical(format!("no metric certifies rho(A) = {rho}")));
    }
    let gamma = best.max(tol);
    let h2 = &best_h * &best_h;
    let gap = sym_max_eigenvalue(&(a.transpose() * &h2 * a - &h2 * gamma));
    if gap > 1e-10 {
        return Err(Error::Numerical(format!("certificate check failed: max eig(A^T H^2 A - gamma H^2) = {gap:e}")));
    }
    Ok(ContractionCertificate {
        h: best_h,
        gamma,
        kind: CertificateKind::Analytic,
    })
}

/// Central-difference Jacobian of `f(t, .)` at `s`.
pub fn jacobian<F>(f: &F, t: i64, s: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(i64, &DVector<f64>) -> DVector<f64> + ?Sized,
{
    let n = s.len();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = 1e-5 * s[c].abs().max(1.0);
        let mut hi = s.clone();
        let mut lo = s.clone();
        hi[c] += h;
        lo[c] -= h;
        let col = (f(t, &hi) - f(t, &lo)) / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}

/// Sampled rate `max ||H J H^-1||^2` over a grid of `(t, s)` points.
///
/// Non-contractive grids are reported through `gamma >= 1` rather than an error.
pub fn contraction_sampled<F>(
    f: &F,
    grid: &[(i64, DVector<f64>)],
    h: &DMatrix<f64>,
    tol: f64,
) -> Result<ContractionCertificate>
where
    F: Fn(i64, &DVector<f64>) -> DVector<f64> + ?Sized,
{
    let hinv = invert_spd(h)?;
    let mut gamma: f64 = 0.0;
    for (t, s) in grid {
        if s.len() != h.nrows() {
            return Err(Error::Dimension {
                expected: h.nrows(),
                got: s.len(),
            });
        }
        let j = jacobian(f, *t, s);
        gamma = gamma.max(op_norm(&(h * j * &hinv)).powi(2));
    }
    Ok(ContractionCertificate {
        h: h.clone(),
        gamma: gamma.max(tol),
        kind: CertificateKind::Sampled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma4Violation {
    pub t: i64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Check `||H (f(t,s2) - f(t,s1))|| <= sqrt(gamma) ||H (s2 - s1)||` on every
/// sample; returns the first falsifying pair. A relative slack of `1e-12`
/// absorbs rounding when the inequality is tight, and an absolute term of a
/// few ulps of the operands covers cancellation in `f(t,s2) - f(t,s1)` when
/// the samples are close.
pub fn lemma4_check<F>(f: &F, cert: &ContractionCertificate, samples: &[(i64, DVector<f64>, DVector<f64>)]) -> Option<Lemma4Violation>
where
    F: Fn(i64, &DVector<f64>) -> DVector<f64> + ?Sized,
{
    let sg = cert.sqrt_gamma();
    let norm_h = cert.norm_h();
    samples.iter().find_map(|(t, s1, s2)| {
        let (f1, f2) = (f(*t, s1), f(*t, s2));
        let lhs = (&cert.h * (&f2 - &f1)).norm();
        let rhs = sg * (&cert.h * (s2 - s1)).norm();
        let ulps = 8.0 * f64::EPSILON * norm_h * (f1.norm() + f2.norm() + sg * (s1.norm() + s2.norm()));
        (lhs > rhs * (1.0 + 1e-12) + ulps).then(|| Lemma4Violation {
            t: *t,
            s1: s1.iter().copied().collect(),
            s2: s2.iter().copied().collect(),
            lhs,
            rhs,
        })
    })
}

/// `t -> sqrt(gamma)^(t - t0) ||H s[t0]|| + sup ||H f_s(tau, 0)|| / (1 - sqrt(gamma))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlendedBound {
    pub t0: i64,
    pub h_s0: f64,
    pub sup_h_fs0: f64,
    pub sqrt_gamma: f64,
}

impl BlendedBound {
    pub fn eval(&self, t: i64) -> f64 {
        let k = (t - self.t0).max(0) as i32;
        self.sqrt_gamma.powi(k) * self.h_s0 + self.limit()
    }

    pub fn limit(&self) -> f64 {
        self.sup_h_fs0 / (1.0 - self.sqrt_gamma)
    }
}

pub fn blended_bound(cert: &ContractionCertificate, t0: i64, s_t0: &DVector<f64>, sup_norm_hfs0: f64) -> BlendedBound {
    BlendedBound {
        t0,
        h_s0: (&cert.h * s_t0).norm(),
        sup_h_fs0: sup_norm_hfs0,
        sqrt_gamma: cert.sqrt_gamma(),
    }
}

/// `M_s = sqrt(N) ||q|| ||H^-1|| ||H|| M(0) / (1 - sqrt(gamma))`.
pub fn blended_limit_bound(n: usize, norm_q: f64, norm_h: f64, norm_h_inv: f64, m0: f64, gamma: f64) -> f64 {
    (n as f64).sqrt() * norm_q * norm_h_inv * norm_h * m0 / (1.0 - gamma.sqrt())
}

/// Constants entering the analytic and corollary `K^min`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KminConstants {
    pub n: usize,
    pub gamma: f64,
    pub lipschitz: f64,
    pub eta: f64,
    pub m1: f64,
    pub ms: f64,
    /// `M(0)`.
    pub m0: f64,
    /// `M(||p|| M_s)`.
    pub m_at_pms: f64,
    pub norm_z: f64,
    pub norm_r: f64,
    pub norm_q: f64,
    pub norm_p: f64,
    pub norm_h: f64,
    pub norm_h_inv: f64,
    pub lambda2_mag: f64,
    pub lambda_n_mag: f64,
}

impl KminConstants {
    /// `eta = 2 L ||q|| ||R|| ||H|| / sqrt(gamma)`; when `L = 0` any positive
    /// value is admissible and `||R|| / (||p|| ||H^-1||)` is used so that both
    /// terms of `M_1` coincide.
    pub fn new(dec: &SpectralDecomposition, cert: &ContractionCertificate, dynamics: &[NodeDynamics]) -> Result<Self> {
        if !cert.is_contractive() {
            return Err(Error::NotContractive { gamma: cert.gamma });
        }
        let n = dec.len();
        let lipschitz = common_lipschitz(dynamics);
        let norm_p = dec.pair.p.norm();
        let norm_q = dec.pair.q.norm();
        let norm_r = dec.norm_r();
        let norm_z = dec.norm_z();
        let norm_h = cert.norm_h();
        let norm_h_inv = cert.norm_h_inv()?;
        let threshold = lipschitz * norm_q * norm_r * norm_h / cert.sqrt_gamma();
        let eta = if threshold > 0.0 {
            2.0 * threshold
        } else if norm_r > 0.0 {
            norm_r / (norm_p * norm_h_inv)
        } else {
            1.0
        };
        let m1 = (norm_p * norm_h_inv).max(norm_r / eta);
        let m0 = common_bound(dynamics, 0.0);
        let ms = blended_limit_bound(n, norm_q, norm_h, norm_h_inv, m0, cert.gamma);
        let m_at_pms = common_bound(dynamics, norm_p * ms);
        Ok(KminConstants {
            n,
            gamma: cert.gamma,
            lipschitz,
            eta,
            m1,
            ms,
            m0,
            m_at_pms,
            norm_z,
            norm_r,
            norm_q,
            norm_p,
            norm_h,
            norm_h_inv,
            lambda2_mag: dec.pair.lambda2_mag,
            lambda_n_mag: dec.pair.lambda_n_mag,
        })
    }

    /// Lower limit `L ||q|| ||R|| ||H|| / sqrt(gamma)` that `eta` must exceed.
    pub fn eta_threshold(&self) -> f64 {
        self.lipschitz * self.norm_q * self.norm_r * self.norm_h / self.gamma.sqrt()
    }

    fn kmin1_coefficient(&self) -> f64 {
        self.eta * self.lipschitz * self.m1 * self.norm_z
    }

    fn kmin1_rhs(&self) -> f64 {
        (1.0 - self.gamma.sqrt()) / 2.0
    }

    fn kmin2_coefficient(&self) -> f64 {
        2.0 * self.eta * self.m1 * self.m_at_pms * (self.n as f64).sqrt() * self.norm_z / (1.0 - self.gamma.sqrt())
    }

    /// Whether each of the two defining inequalities holds at `k`.
    pub fn kmin_conditions(&self, k: usize, eps: f64) -> (bool, bool) {
        let l = self.lambda2_mag.powi(k as i32);
        (
            l * self.kmin1_coefficient() <= self.kmin1_rhs(),
            l * self.kmin2_coefficient() <= eps / 2.0,
        )
    }

    /// Ultimate bound on `V` for a given `K`.
    pub fn lyapunov_limit(&self, k: usize) -> f64 {
        self.lambda2_mag.powi(k as i32 - 1) * 2.0 * self.eta * self.norm_z / (1.0 - self.gamma.sqrt())
            * (self.n as f64).sqrt()
            * self.m_at_pms
    }
}

/// Smallest `k >= 1` with `lambda^k c <= r`.
fn smallest_power(c: f64, r: f64, lambda: f64) -> Result<usize> {
    if c <= r {
        return Ok(1);
    }
    if lambda <= ZERO_EIGEN_TOL {
        return Ok(1);
    }
    if !(lambda < 1.0) {
        return Err(Error::assumption(format!("|lambda_2| = {lambda} is not below 1")));
    }
    if r <= 0.0 || !c.is_finite() {
        return Err(Error::Numerical(format!("cannot solve lambda^K * {c:e} <= {r:e}")));
    }
    let est = ((r / c).ln() / lambda.ln()).ceil();
    if !(est < 1e9) {
        return Err(Error::Numerical(format!("K^min estimate {est:e} is out of range")));
    }
    let mut k = (est as usize).max(1);
    while k > 1 && lambda.powi(k as i32 - 1) * c <= r {
        k -= 1;
    }
    while lambda.powi(k as i32) * c > r {
        k += 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticKmin {
    pub k: usize,
    pub eps: f64,
    pub constants: KminConstants,
}

/// Smallest `K` satisfying both `|l2|^K eta L M1 ||Z|| <= (1 - sqrt(gamma)) / 2`
/// and `|l2|^K 2 eta M1 M(||p|| Ms) sqrt(N) ||Z|| / (1 - sqrt(gamma)) <= eps / 2`.
pub fn kmin_analytic(consts: &KminConstants, eps: f64) -> Result<AnalyticKmin> {
    if !(eps > 0.0) {
        return Err(Error::Parameter {
            name: "eps",
            value: eps,
            reason: "must be positive",
        });
    }
    if !(consts.gamma < 1.0) {
        return Err(Error::NotContractive { gamma: consts.gamma });
    }
    if !(consts.lambda2_mag < 1.0) {
        return Err(Error::assumption(format!("|lambda_2| = {} is not below 1", consts.lambda2_mag)));
    }
    let k1 = smallest_power(consts.kmin1_coefficient(), consts.kmin1_rhs(), consts.lambda2_mag)?;
    let k2 = smallest_power(consts.kmin2_coefficient(), eps / 2.0, consts.lambda2_mag)?;
    Ok(AnalyticKmin {
        k: k1.max(k2),
        eps,
        constants: consts.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorollaryKmin {
    pub eps0: f64,
    pub delta: f64,
    pub sup_f: f64,
    pub k: usize,
}

/// `eps0 = eps / (2 max(||p|| ||H^-1||, ||R||))`,
/// `delta = min(1, (1 - sqrt(gamma)) / (L ||q|| ||R|| ||H||)) eps0`, and the
/// smallest `K` with `|l2|^K ||Z|| supF <= delta`.
pub fn kmin_corollary(
    dec: &SpectralDecomposition,
    eps: f64,
    lipschitz: f64,
    cert: &ContractionCertificate,
    sup_f: f64,
) -> Result<CorollaryKmin> {
    if !(eps > 0.0) {
        return Err(Error::Parameter {
            name: "eps",
            value: eps,
            reason: "must be positive",
        });
    }
    if !cert.is_contractive() {
        return Err(Error::NotContractive { gamma: cert.gamma });
    }
    let (eps0, delta) = corollary_radii(dec, eps, lipschitz, cert)?;
    let k = smallest_power(dec.norm_z() * sup_f, delta, dec.pair.lambda2_mag)?;
    Ok(CorollaryKmin { eps0, delta, sup_f, k })
}

/// `(eps0, delta)` of the invariant set.
pub fn corollary_radii(
    dec: &SpectralDecomposition,
    eps: f64,
    lipschitz: f64,
    cert: &ContractionCertificate,
) -> Result<(f64, f64)> {
    let eps0 = eps / (2.0 * (dec.pair.p.norm() * cert.norm_h_inv()?).max(dec.norm_r()));
    let gain = lipschitz * dec.pair.q.norm() * dec.norm_r() * cert.norm_h();
    let factor = if gain > 0.0 {
        ((1.0 - cert.sqrt_gamma()) / gain).min(1.0)
    } else {
        1.0
    };
    Ok((eps0, factor * eps0))
}

/// Upper bound on `sup ||F(t, x)||` over the set entered by the corollary run.
///
/// Initial states lie in a box of per-node radius `box_radius`; afterwards
/// `x = p xi_1 + R xi~` with `||H(xi_1 - s)|| <= eps0`, `||xi~|| <= delta` and
/// `s` bounded through the blended-dynamics comparison argument. Every node
/// state is then bounded by `r`, and `||F|| <= sqrt(N) M(r)`.
pub fn corollary_sup_f(
    consts: &KminConstants,
    dec: &SpectralDecomposition,
    dynamics: &[NodeDynamics],
    box_radius: f64,
    eps0: f64,
    delta: f64,
) -> f64 {
    let sqrt_n = (consts.n as f64).sqrt();
    let sg = consts.gamma.sqrt();
    let s1 = consts.norm_q * sqrt_n * common_bound(dynamics, box_radius);
    let hfs0 = consts.norm_h * consts.norm_q * sqrt_n * consts.m0;
    let s_max = consts.norm_h_inv * (consts.norm_h * s1 + hfs0 / (1.0 - sg));
    let p_inf = dec.pair.p.amax();
    let r = box_radius.max(p_inf * (s_max + consts.norm_h_inv * eps0) + delta);
    sqrt_n * common_bound(dynamics, r)
}

/// `max_t ||F(t, x[t])||` over recorded integer states of a trace, a sampled
/// cross-check of [`corollary_sup_f`].
pub fn sampled_sup_f(trace: &SimulationTrace) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (t, state) in trace.integer_states() {
        let epoch = trace.epoch_at(t);
        best = best.max(apply_dynamics(&state.x, t, &epoch.dynamics)?.norm());
    }
    Ok(best)
}

/// Integer times `[start, horizon]` of the tail window.
pub fn tail_window(horizon: i64, fraction: f64) -> Result<(i64, i64)> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1 to form a tail".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter {
            name: "tail_fraction",
            value: fraction,
            reason: "must lie in (0, 1]",
        });
    }
    let width = ((horizon as f64 * fraction).ceil() as i64).max(MIN_TAIL_STEPS).min(horizon);
    Ok((horizon - width + 1, horizon))
}

/// `max_i ||x_i[t] - p_i s[t]||`, with the per-node values.
fn sync_errors(trace: &SimulationTrace, t: i64) -> Option<Vec<(NodeId, f64)>> {
    let epoch = trace.epoch_at(t);
    if t <= epoch.start {
        // s[t] at an event instant belongs to the previous topology
        return None;
    }
    let state = trace.state_at(t, 0)?;
    let s = trace.blended_at(t)?;
    Some(node_errors(&state.x, &state.ids, &epoch.pair.p, s))
}

fn node_errors(x: &DMatrix<f64>, ids: &[NodeId], p: &DVector<f64>, s: &DVector<f64>) -> Vec<(NodeId, f64)> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| (*id, (x.row(i).transpose() - s * p[i]).norm()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailErrors {
    pub window: (i64, i64),
    pub per_node: BTreeMap<NodeId, f64>,
    pub max: f64,
}

/// Sup over the tail window of `||x_i[t] - p_i s[t]||`. Event instants are
/// skipped since the blended reference is re-seeded one step later.
pub fn tail_errors(trace: &SimulationTrace, tail_fraction: f64) -> Result<TailErrors> {
    if trace.blended.is_empty() {
        return Err(Error::Config("trace has no blended reference".into()));
    }
    let window = tail_window(trace.horizon, tail_fraction)?;
    let mut per_node = BTreeMap::new();
    for t in window.0..=window.1 {
        for (id, e) in sync_errors(trace, t).unwrap_or_default() {
            let slot = per_node.entry(id).or_insert(0.0_f64);
            *slot = slot.max(e);
        }
    }
    let max = per_node.values().copied().fold(0.0, f64::max);
    Ok(TailErrors { window, per_node, max })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalKmin {
    pub k: usize,
    pub error: f64,
    /// Tail error at `K - 1` (absent when `K = 1`).
    pub error_below: Option<f64>,
    pub evaluations: BTreeMap<usize, f64>,
}

/// Smallest `K <= k_max` whose tail error is at most `eps`, by doubling and
/// then bisection. The result satisfies `err(K) <= eps < err(K - 1)`.
pub fn kmin_empirical(scenario: &Scenario, eps: f64, tail_fraction: f64, k_max: usize) -> Result<EmpiricalKmin> {
    if !(eps > 0.0) {
        return Err(Error::Parameter {
            name: "eps",
            value: eps,
            reason: "must be positive",
        });
    }
    let mut evaluations = BTreeMap::new();
    let mut err = |k: usize| -> Result<f64> {
        if let Some(e) = evaluations.get(&k) {
            return Ok(*e);
        }
        let trace = sim::simulate(&scenario.with_steps(k))?;
        let e = tail_errors(&trace, tail_fraction)?.max;
        log::debug!("K = {k}: tail error {e:e}");
        evaluations.insert(k, e);
        Ok(e)
    };
    let mut lo = 0usize;
    let mut hi = 1usize;
    loop {
        if err(hi)? <= eps {
            break;
        }
        if hi >= k_max {
            return Err(Error::SearchExhausted { k_max, eps });
        }
        lo = hi;
        hi = (hi * 2).min(k_max);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if err(mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let error = err(hi)?;
    let error_below = if hi > 1 { Some(err(hi - 1)?) } else { None };
    Ok(EmpiricalKmin {
        k: hi,
        error,
        error_below,
        evaluations,
    })
}

/// Affine certificates for every epoch of a trace.
pub fn certify_affine_epochs(trace: &SimulationTrace, tol: f64) -> Result<Vec<ContractionCertificate>> {
    trace
        .epochs
        .iter()
        .map(|e| {
            let map = e
                .blended()
                .affine()
                .ok_or_else(|| Error::Config("blended dynamics is not affine; supply a sampled certificate".into()))?;
            contraction_affine(&map.a, tol).map_err(|err| err.at(e.start))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionalError {
    pub t: i64,
    pub k: usize,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub t: i64,
    pub v: f64,
    /// `||H (xi_1 - s)||`.
    pub xi_error: f64,
    pub xitilde_norm: f64,
    /// `||F(t, p (x) s[t])||`.
    pub f_norm: f64,
}

/// One integer step `t -> t + 1` of the Lyapunov argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovStep {
    pub t: i64,
    /// `V[t+1] - V[t]`.
    pub lhs: f64,
    /// `-(1 - sqrt(gamma))/2 V[t] + |l2|^(K-1) eta ||Z|| ||F(t, p (x) s[t])||`.
    pub rhs: f64,
    /// `(sqrt(gamma) - 1 + |l2|^(K-1) eta L M1 ||Z||) V[t] + |l2|^(K-1) eta ||Z|| ||F||`,
    /// the one-step estimate valid for every `K`.
    pub rhs_general: f64,
    /// Rounding allowance used for both comparisons.
    pub slack: f64,
}

impl LyapunovStep {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + self.slack
    }

    pub fn holds_general(&self) -> bool {
        self.lhs <= self.rhs_general + self.slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub start: i64,
    pub nodes: usize,
    pub certificate: CertificateKind,
    pub gamma: f64,
    pub constants: KminConstants,
    /// Whether `K` exceeds the analytic `K^min` so the decrease estimate applies.
    pub k_above_analytic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub eps: f64,
    pub steps_per_round: usize,
    pub evidence_only: bool,
    pub epochs: Vec<EpochSummary>,
    pub tail: TailErrors,
    /// `(t, max_i ||x_i[t] - p_i s[t]||)` for every comparable `t >= 1`.
    pub sync_error: Vec<(i64, f64)>,
    pub fractional: Vec<FractionalError>,
    pub fractional_tail_violations: usize,
    pub lyapunov: Vec<LyapunovPoint>,
    pub lyapunov_steps: Vec<LyapunovStep>,
    pub blended_bound_violations: usize,
    pub checks: BTreeMap<String, bool>,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// `t,V,xi_error,xitilde_norm,f_norm,lhs,rhs`; the step columns are blank
    /// where `t + 1` is outside the epoch.
    pub fn lyapunov_csv(&self) -> String {
        let steps: BTreeMap<i64, &LyapunovStep> = self.lyapunov_steps.iter().map(|s| (s.t, s)).collect();
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["t", "V", "xi_error", "xitilde_norm", "f_norm", "lhs", "rhs"]).expect("in-memory write");
        for p in &self.lyapunov {
            let (lhs, rhs) = steps
                .get(&p.t)
                .map_or((String::new(), String::new()), |s| (s.lhs.to_string(), s.rhs.to_string()));
            w.write_record([
                p.t.to_string(),
                p.v.to_string(),
                p.xi_error.to_string(),
                p.xitilde_norm.to_string(),
                p.f_norm.to_string(),
                lhs,
                rhs,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn lyapunov_holds(&self) -> bool {
        self.lyapunov_steps.iter().all(LyapunovStep::holds)
    }
}

/// Measure the error bounds and the Lyapunov series of a trace.
///
/// `certs` holds one certificate per epoch of the trace.
pub fn error_report(
    trace: &SimulationTrace,
    certs: &[ContractionCertificate],
    eps: f64,
    tail_fraction: f64,
) -> Result<ErrorReport> {
    if trace.blended.is_empty() {
        return Err(Error::Config("trace has no blended reference".into()));
    }
    if certs.len() != trace.epochs.len() {
        return Err(Error::Dimension {
            expected: trace.epochs.len(),
            got: certs.len(),
        });
    }
    let kk = trace.steps_per_round;
    let tail = tail_errors(trace, tail_fraction)?;

    let mut epochs = Vec::new();
    let mut decs = Vec::new();
    for (e, cert) in trace.epochs.iter().zip(certs) {
        let dec = e.decomposition().map_err(|err| err.at(e.start))?;
        let constants = KminConstants::new(&dec, cert, &e.dynamics).map_err(|err| err.at(e.start))?;
        let k_above = kmin_analytic(&constants, eps).ok().map(|a| kk > a.k);
        epochs.push(EpochSummary {
            start: e.start,
            nodes: e.graph.len(),
            certificate: cert.kind,
            gamma: cert.gamma,
            constants,
            k_above_analytic: k_above,
        });
        decs.push(dec);
    }
    let epoch_index = |t: i64| trace.epochs.iter().rposition(|e| e.start <= t).expect("epoch 0");

    let sync_error: Vec<(i64, f64)> = (1..=trace.horizon)
        .filter_map(|t| sync_errors(trace, t).map(|v| (t, v.iter().map(|x| x.1).fold(0.0, f64::max))))
        .collect();

    // fractional errors ||x_i[t_k] - p_i s[t+1]||
    let mut fractional = Vec::new();
    let mut fractional_tail_violations = 0;
    for (ft, state) in trace.records.iter().filter(|(ft, _)| ft.k > 0) {
        let ei = epoch_index(ft.t);
        let Some(s) = trace.blended_at(ft.t + 1) else { continue };
        if ft.t < trace.epochs[ei].start {
            continue;
        }
        let errs = node_errors(&state.x, &state.ids, &trace.epochs[ei].pair.p, s);
        let error = errs.iter().map(|x| x.1).fold(0.0, f64::max);
        let ln = trace.epochs[ei].pair.lambda_n_mag;
        let bound = if ln > ZERO_EIGEN_TOL {
            eps / 2.0 * (1.0 + ln.powi(-((kk - ft.k) as i32)))
        } else {
            f64::INFINITY
        };
        if ft.t + 1 >= tail.window.0 && error > bound {
            fractional_tail_violations += 1;
        }
        fractional.push(FractionalError {
            t: ft.t,
            k: ft.k,
            error,
            bound,
        });
    }

    // Lyapunov series on integer times with a same-epoch reference
    let mut lyapunov = Vec::new();
    let mut scales = BTreeMap::new();
    for (t, state) in trace.integer_states() {
        if t < 1 {
            continue;
        }
        let ei = epoch_index(t);
        if t <= trace.epochs[ei].start {
            continue;
        }
        let Some(s) = trace.blended_at(t) else { continue };
        let epoch = &trace.epochs[ei];
        let cert = &certs[ei];
        let tr = sim::transform(state, &decs[ei])?;
        let xi_error = (&cert.h * (&tr.xi1 - s)).norm();
        let xitilde_norm = tr.xitilde_norm();
        let consensus = &epoch.pair.p * s.transpose();
        let f_norm = apply_dynamics(&consensus, t, &epoch.dynamics)?.norm();
        let v = xi_error + epochs[ei].constants.eta * xitilde_norm;
        scales.insert(t, state.x.norm() + s.norm() * epochs[ei].constants.norm_p);
        lyapunov.push(LyapunovPoint {
            t,
            v,
            xi_error,
            xitilde_norm,
            f_norm,
        });
    }
    let mut lyapunov_steps = Vec::new();
    for pair in lyapunov.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t != a.t + 1 || epoch_index(a.t) != epoch_index(b.t) {
            continue;
        }
        let c = &epochs[epoch_index(a.t)].constants;
        let sg = c.gamma.sqrt();
        let decay = c.lambda2_mag.powi(kk as i32 - 1);
        let forcing = decay * c.eta * c.norm_z * a.f_norm;
        let scale = 1.0 + scales[&a.t] + scales[&b.t];
        lyapunov_steps.push(LyapunovStep {
            t: a.t,
            lhs: b.v - a.v,
            rhs: -(1.0 - sg) / 2.0 * a.v + forcing,
            rhs_general: (sg - 1.0 + decay * c.eta * c.lipschitz * c.m1 * c.norm_z) * a.v + forcing,
            slack: 1e-12 * scale * (1.0 + c.eta) * c.norm_h.max(1.0),
        });
    }

    // ||H s[t]|| against the comparison bound, per epoch
    let mut blended_bound_violations = 0;
    for (ei, e) in trace.epochs.iter().enumerate() {
        let end = trace.epochs.get(ei + 1).map_or(trace.horizon, |n| n.start);
        let t0 = e.start + 1;
        let Some(s0) = trace.blended_at(t0) else { continue };
        let bd = e.blended();
        let cert = &certs[ei];
        let zero = DVector::zeros(bd.dim());
        let sup = (t0..end.max(t0))
            .map(|t| (&cert.h * bd.eval(t, &zero)).norm())
            .fold(0.0, f64::max);
        let bound = blended_bound(cert, t0, s0, sup);
        for t in t0..=end {
            if let Some(s) = trace.blended_at(t) {
                let hs = (&cert.h * s).norm();
                if hs > bound.eval(t) * (1.0 + 1e-12) + 1e-12 {
                    blended_bound_violations += 1;
                }
            }
        }
    }

    let mut checks = BTreeMap::new();
    checks.insert("tail_error_within_eps".into(), tail.max <= eps);
    checks.insert("fractional_tail_within_bound".into(), fractional_tail_violations == 0);
    checks.insert(
        "lyapunov_decrease".into(),
        lyapunov_steps.iter().all(LyapunovStep::holds),
    );
    checks.insert(
        "lyapunov_one_step".into(),
        lyapunov_steps.iter().all(LyapunovStep::holds_general),
    );
    checks.insert("blended_bound".into(), blended_bound_violations == 0);
    let evidence_only = certs.iter().any(ContractionCertificate::evidence_only);
    Ok(ErrorReport {
        eps,
        steps_per_round: kk,
        evidence_only,
        epochs,
        tail,
        sync_error,
        fractional,
        fractional_tail_violations,
        lyapunov,
        lyapunov_steps,
        blended_bound_violations,
        checks,
    })
}

/// Fractional-time identities of the transformed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionIdentities {
    /// `max |xi_1[t_k] - xi_1[(t+1)_0]| / max(1, |xi_1|)` over `k = 1..K-1`.
    pub xi1_relative_deviation: f64,
    /// Steps with `||xi~[t_k]|| |l_N|^(K-k) > ||xi~[t+1]|| + 1e-9`.
    pub decay_violations: usize,
    /// Steps with `||xi~[t_k]|| |l_N|^(K-k) < ||xi~[t+1]|| - 1e-9`.
    pub reverse_violations: usize,
    pub checked: usize,
}

/// Evaluate the fraction-count identities over a trace recorded at
/// fractional granularity. The decay check is skipped for `|l_N| <= 1e-12`.
pub fn fraction_identities(trace: &SimulationTrace) -> Result<FractionIdentities> {
    let mut out = FractionIdentities {
        xi1_relative_deviation: 0.0,
        decay_violations: 0,
        reverse_violations: 0,
        checked: 0,
    };
    let kk = trace.steps_per_round;
    let mut decs: BTreeMap<i64, SpectralDecomposition> = BTreeMap::new();
    for e in &trace.epochs {
        decs.insert(e.start, e.decomposition()?);
    }
    for (ft, state) in trace.records.iter().filter(|(ft, _)| ft.k > 0) {
        let epoch = trace.epoch_at(ft.t);
        // the next integer state belongs to this epoch unless an event fires at t + 1
        if trace.epochs.iter().any(|e| e.start == ft.t + 1) {
            continue;
        }
        let Some(next) = trace.state_at(ft.t + 1, 0) else { continue };
        let dec = &decs[&epoch.start];
        let a = sim::transform(state, dec)?;
        let b = sim::transform(next, dec)?;
        let scale = b.xi1.amax().max(1.0);
        out.xi1_relative_deviation = out.xi1_relative_deviation.max((&a.xi1 - &b.xi1).amax() / scale);
        let ln = epoch.pair.lambda_n_mag;
        if ln > ZERO_EIGEN_TOL {
            let lhs = a.xitilde_norm() * ln.powi((kk - ft.k) as i32);
            let rhs = b.xitilde_norm();
            out.checked += 1;
            if lhs > rhs + 1e-9 {
                out.decay_violations += 1;
            }
            if lhs < rhs - 1e-9 {
                out.reverse_violations += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a)
    }

    #[test]
    fn scalar_certificates() {
        let c = contraction_affine(&scalar(0.8), GAMMA_TOL).unwrap();
        assert_abs_diff_eq!(c.h[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.gamma, 0.64, epsilon = 1e-14);
        assert_eq!(c.kind, CertificateKind::Analytic);

        let z = contraction_affine(&scalar(0.0), GAMMA_TOL).unwrap();
        assert_eq!(z.gamma, GAMMA_TOL);

        assert!(matches!(contraction_affine(&scalar(1.0), GAMMA_TOL), Err(Error::NotContractive { .. })));
        assert!(matches!(contraction_affine(&scalar(-1.2), GAMMA_TOL), Err(Error::NotContractive { .. })));
    }

    #[test]
    fn non_normal_matrix_needs_weighted_metric() {
        // ||A|| > 1 but rho(A) = 0.5
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 4.0, 0.0, 0.5]);
        assert!(op_norm(&a) > 1.0);
        let c = contraction_affine(&a, GAMMA_TOL).unwrap();
        assert!(c.gamma < 1.0);
        let h2 = &c.h * &c.h;
        assert!(sym_max_eigenvalue(&(a.transpose() * &h2 * &a - &h2 * c.gamma)) <= 1e-10);
        assert_abs_diff_eq!(sym_max_eigenvalue(&c.h), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_matches_analytic() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.4]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let analytic = contraction_affine(&a, GAMMA_TOL).unwrap();
        let f = |_t: i64, s: &DVector<f64>| &a * s + &b;
        let grid: Vec<(i64, DVector<f64>)> = (0..5).map(|i| (i, DVector::from_vec(vec![i as f64, -3.0 * i as f64]))).collect();
        let sampled = contraction_sampled(&f, &grid, &analytic.h, GAMMA_TOL).unwrap();
        assert!((sampled.gamma - analytic.gamma).abs() < 1e-6);
        assert!(sampled.evidence_only());

        let id = |_t: i64, s: &DVector<f64>| s.clone();
        let h = DMatrix::identity(2, 2);
        let c = contraction_sampled(&id, &grid, &h, GAMMA_TOL).unwrap();
        assert!((c.gamma - 1.0).abs() < 1e-8);
        assert!(!c.is_contractive() || c.gamma > 1.0 - 1e-8);

        let half = |_t: i64, s: &DVector<f64>| s * 0.5 + DVector::from_element(2, 3.0);
        let c = contraction_sampled(&half, &grid, &h, GAMMA_TOL).unwrap();
        assert!((c.gamma - 0.25).abs() < 1e-8);

        assert!(contraction_sampled(&half, &grid, &DMatrix::zeros(2, 2), GAMMA_TOL).is_err());
    }

    #[test]
    fn lemma4_examples() {
        let cert = contraction_affine(&scalar(0.8), GAMMA_TOL).unwrap();
        let f = |_t: i64, s: &DVector<f64>| s * 0.8 + DVector::from_element(1, 1.0);
        let s = DVector::from_element(1, 3.0);
        assert!(lemma4_check(&f, &cert, &[(0, s.clone(), s.clone())]).is_none());
        let pairs: Vec<_> = (0..50)
            .map(|i| (i, DVector::from_element(1, i as f64 * 0.7 - 9.0), DVector::from_element(1, 2.0 - i as f64)))
            .collect();
        assert!(lemma4_check(&f, &cert, &pairs).is_none());

        let g = |_t: i64, s: &DVector<f64>| s * 1.1;
        let v = lemma4_check(&g, &cert, &pairs[1..]).unwrap();
        assert!(v.lhs > v.rhs);
    }

    #[test]
    fn comparison_bound() {
        let cert = contraction_affine(&scalar(0.5), GAMMA_TOL).unwrap();
        let b = blended_bound(&cert, 0, &DVector::from_element(1, 4.0), 0.0);
        assert_abs_diff_eq!(b.eval(0), 4.0);
        assert_abs_diff_eq!(b.eval(3), 0.5);
        assert_eq!(b.limit(), 0.0);

        // a = 0.9, offset 1: limit 1 / (1 - 0.9) = 10
        let cert = contraction_affine(&scalar(0.9), GAMMA_TOL).unwrap();
        let b = blended_bound(&cert, 0, &DVector::from_element(1, 0.0), 1.0);
        assert_abs_diff_eq!(b.limit(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn smallest_power_is_minimal() {
        assert_eq!(smallest_power(1.0, 2.0, 0.5).unwrap(), 1);
        assert_eq!(smallest_power(8.0, 1.0, 0.5).unwrap(), 3);
        assert_eq!(smallest_power(8.0, 0.999, 0.5).unwrap(), 4);
        assert_eq!(smallest_power(8.0, 1.0, 0.0).unwrap(), 1);
        assert!(smallest_power(8.0, 1.0, 1.0).is_err());
        for (c, r, l) in [(1e6, 1e-3, 0.93), (3.0, 0.2, 0.1), (50.0, 49.0, 0.999)] {
            let k = smallest_power(c, r, l).unwrap();
            assert!(l.powi(k as i32) * c <= r);
            assert!(k == 1 || l.powi(k as i32 - 1) * c > r);
        }
    }

    #[test]
    fn tail_window_sizes() {
        assert_eq!(tail_window(100, 0.25).unwrap(), (76, 100));
        assert_eq!(tail_window(20, 0.25).unwrap(), (11, 20));
        assert_eq!(tail_window(5, 0.25).unwrap(), (1, 5));
        assert!(tail_window(0, 0.25).is_err());
        assert!(tail_window(10, 0.0).is_err());
    }
}
