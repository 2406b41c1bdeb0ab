//! Distributed algorithms built on the blended dynamics: network-size
//! estimation, PageRank and degree-sequence estimation.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{check_open_unit, Error, Result};
use crate::graph::{DegreeSequence, DirectedGraph, NodeId};
use crate::sim::{DynamicsFamily, NodeDynamics, SimulationTrace};

/// Largest integer up to which every integer is an exact `f64`.
pub const F64_EXACT_LIMIT: f64 = 9_007_199_254_740_992.0; // 2^53

/// `f_anchor = 1`, `f_i(x) = x + 1` elsewhere; the blended map
/// `s -> (1 - 1/N) s + 1` has its equilibrium at `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSize {
    pub anchor: NodeId,
}

impl NetSize {
    /// Anchor defaults to the smallest id of `g`.
    pub fn new(g: &DirectedGraph, anchor: Option<NodeId>) -> Result<Self> {
        let anchor = match anchor {
            Some(a) => a,
            None => *g.ids().first().ok_or_else(|| Error::Config("empty graph".into()))?,
        };
        if !g.contains(anchor) {
            return Err(Error::Config(format!("anchor node {anchor} is not in the graph")));
        }
        Ok(NetSize { anchor })
    }
}

impl DynamicsFamily for NetSize {
    fn name(&self) -> String {
        "netsize".into()
    }

    fn dim(&self) -> usize {
        1
    }

    fn build(&self, g: &DirectedGraph) -> Result<Vec<NodeDynamics>> {
        if !g.contains(self.anchor) {
            return Err(Error::Config(format!("anchor node {} is missing", self.anchor)));
        }
        Ok(g.ids()
            .into_iter()
            .map(|id| {
                if id == self.anchor {
                    NodeDynamics::scalar_affine(0.0, 1.0)
                } else {
                    NodeDynamics::scalar_affine(1.0, 1.0)
                }
            })
            .collect())
    }

    fn protected(&self) -> Vec<NodeId> {
        vec![self.anchor]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetSizeEstimate {
    pub per_node: BTreeMap<NodeId, i64>,
    pub tail_error: f64,
    /// Rounding is only justified when the tail error is below 0.5.
    pub reliable: bool,
}

/// Round each node's final state to the nearest integer.
pub fn netsize_estimate(trace: &SimulationTrace, tail_fraction: f64) -> Result<NetSizeEstimate> {
    let tail = analysis::tail_errors(trace, tail_fraction)?;
    let state = trace.final_state();
    let per_node = state
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, state.x[(i, 0)].round() as i64))
        .collect();
    if tail.max >= 0.5 {
        log::warn!("tail error {} >= 0.5: network-size estimate is unreliable", tail.max);
    }
    Ok(NetSizeEstimate {
        per_node,
        tail_error: tail.max,
        reliable: tail.max < 0.5,
    })
}

/// `f_i(x) = nu x + (1 - nu) / N`; the blended map `s -> nu s + 1 - nu` has
/// its equilibrium at 1 so `x_i -> p_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRank {
    pub nu: f64,
    /// Network size used by every node; the true size when `None`.
    pub n: Option<usize>,
}

impl PageRank {
    pub fn new(nu: f64, n: Option<usize>) -> Result<Self> {
        check_open_unit("nu", nu)?;
        if n == Some(0) {
            return Err(Error::Parameter {
                name: "N",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(PageRank { nu, n })
    }
}

impl DynamicsFamily for PageRank {
    fn name(&self) -> String {
        "pagerank".into()
    }

    fn dim(&self) -> usize {
        1
    }

    fn build(&self, g: &DirectedGraph) -> Result<Vec<NodeDynamics>> {
        let n = self.n.unwrap_or(g.len()) as f64;
        Ok(vec![NodeDynamics::scalar_affine(self.nu, (1.0 - self.nu) / n); g.len()])
    }
}

/// Final PageRank estimates `x_i[T]`.
pub fn pagerank_scores(trace: &SimulationTrace) -> BTreeMap<NodeId, f64> {
    let state = trace.final_state();
    state.ids.iter().enumerate().map(|(i, id)| (*id, state.x[(i, 0)])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    #[default]
    Floating,
    Exact,
}

/// `f_i(x) = (1 - 1/d_i) x + N^{X_i}` with distinct ids `X_i > 1`; the blended
/// equilibrium `s* = sum_i d_i N^{X_i - 1}` carries the degrees as base-`N` digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegSeq {
    /// Explicit ids; `node_id + 1` when absent.
    pub ids: BTreeMap<NodeId, u32>,
    pub arithmetic: Arithmetic,
}

impl DegSeq {
    pub fn new(ids: BTreeMap<NodeId, u32>, arithmetic: Arithmetic) -> Self {
        DegSeq { ids, arithmetic }
    }

    /// Ids `X_i = node_id + 1`.
    pub fn default_ids(arithmetic: Arithmetic) -> Self {
        DegSeq {
            ids: BTreeMap::new(),
            arithmetic,
        }
    }

    pub fn id_of(&self, node: NodeId) -> Result<u32> {
        match self.ids.get(&node) {
            Some(&x) => Ok(x),
            None => u32::try_from(node.0 + 1).map_err(|_| Error::Config(format!("node id {node} too large"))),
        }
    }

    /// Validated `(d_i, X_i)` in node order.
    pub fn encoding(&self, g: &DirectedGraph) -> Result<Vec<(usize, u32)>> {
        if !g.is_undirected() {
            return Err(Error::assumption("degree-sequence estimation needs an undirected graph"));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(g.len());
        for id in g.ids() {
            let x = self.id_of(id)?;
            if x <= 1 {
                return Err(Error::Config(format!("degree-sequence id of node {id} must exceed 1, got {x}")));
            }
            if !seen.insert(x) {
                return Err(Error::Config(format!("degree-sequence id {x} is used twice")));
            }
            let d = g.in_degree(id);
            if d == 0 {
                return Err(Error::assumption(format!("node {id} has no neighbours")));
            }
            out.push((d, x));
        }
        Ok(out)
    }

    /// Smallest id in use.
    pub fn min_id(&self, g: &DirectedGraph) -> Result<u32> {
        Ok(self.encoding(g)?.iter().map(|e| e.1).min().unwrap_or(1))
    }

    /// Decode a node state with [`degseq_decode_aligned`].
    pub fn decode(&self, g: &DirectedGraph, value: f64) -> Result<DegreeSequence> {
        degseq_decode_aligned(value, g.len(), self.max_id(g)?, self.min_id(g)?)
    }

    /// `B = max X_i`.
    pub fn max_id(&self, g: &DirectedGraph) -> Result<u32> {
        Ok(self.encoding(g)?.iter().map(|e| e.1).max().unwrap_or(0))
    }

    /// Exact equilibrium `sum_i d_i N^{X_i - 1}`.
    pub fn fixed_point(&self, g: &DirectedGraph) -> Result<BigUint> {
        let n = BigUint::from(g.len());
        Ok(self
            .encoding(g)?
            .iter()
            .map(|&(d, x)| BigUint::from(d) * n.pow(x - 1))
            .sum())
    }

    /// Floating mode requires `N^B <= 2^53` so that every state is exact enough to decode.
    pub fn check_floating(&self, g: &DirectedGraph) -> Result<()> {
        let b = self.max_id(g)?;
        let top = (g.len() as f64).powi(b as i32);
        if top > F64_EXACT_LIMIT {
            return Err(Error::Config(format!(
                "floating mode needs N^B <= 2^53, but {}^{b} = {top:e}; use exact arithmetic",
                g.len()
            )));
        }
        Ok(())
    }
}

impl DynamicsFamily for DegSeq {
    fn name(&self) -> String {
        "degseq".into()
    }

    fn dim(&self) -> usize {
        1
    }

    fn build(&self, g: &DirectedGraph) -> Result<Vec<NodeDynamics>> {
        if self.arithmetic == Arithmetic::Floating {
            self.check_floating(g)?;
        }
        let n = g.len() as f64;
        Ok(self
            .encoding(g)?
            .into_iter()
            .map(|(d, x)| NodeDynamics::scalar_affine(1.0 - 1.0 / d as f64, n.powi(x as i32)))
            .collect())
    }
}

/// Round, expand in base `N` over `B` digits, drop zeros and sort.
///
/// A value of 0 decodes to the empty sequence, which no connected graph has.
pub fn degseq_decode(value: f64, n: usize, b: u32) -> Result<DegreeSequence> {
    if !value.is_finite() || value < -0.5 {
        return Err(Error::Numerical(format!("cannot decode {value}")));
    }
    let rounded = value.round();
    if rounded > F64_EXACT_LIMIT {
        return Err(Error::Numerical(format!("{value} exceeds the exact integer range of f64")));
    }
    decode_integer(&BigUint::from(rounded as u64), n, b)
}

/// Decode using that every id exceeds 1: positions below `min_id - 1` are
/// always zero, so the value is rounded to the nearest multiple of
/// `N^(min_id - 1)`. This tolerates any error below `N^(min_id - 1) / 2 >= 1`,
/// whereas plain rounding needs an error below 0.5.
pub fn degseq_decode_aligned(value: f64, n: usize, b: u32, min_id: u32) -> Result<DegreeSequence> {
    if min_id < 1 {
        return Err(Error::Config("ids start at 1".into()));
    }
    let unit = (n as f64).powi(min_id as i32 - 1);
    degseq_decode((value / unit).round() * unit, n, b)
}

/// Exact variant of [`degseq_decode_aligned`]: rounds a rational to the
/// nearest multiple of `N^(min_id - 1)`.
pub fn degseq_decode_exact(value: &BigRational, n: usize, b: u32, min_id: u32) -> Result<DegreeSequence> {
    if min_id < 1 {
        return Err(Error::Config("ids start at 1".into()));
    }
    let unit = BigInt::from(n).pow(min_id - 1);
    let rounded = (value / BigRational::from_integer(unit.clone())).round().to_integer() * unit;
    if rounded.is_negative() {
        return Err(Error::Numerical(format!("cannot decode negative value {rounded}")));
    }
    decode_integer(&rounded.magnitude().clone(), n, b)
}

fn decode_integer(value: &BigUint, n: usize, b: u32) -> Result<DegreeSequence> {
    if n < 2 {
        return Err(Error::Config("decoding needs N >= 2".into()));
    }
    let base = BigUint::from(n);
    if *value >= base.pow(b) {
        return Err(Error::Numerical(format!("{value} has more than {b} base-{n} digits (corrupted state)")));
    }
    let mut digits = Vec::new();
    let mut rest = value.clone();
    for _ in 0..b {
        let digit = (&rest % &base).to_usize().expect("digit below base");
        rest /= &base;
        if digit != 0 {
            digits.push(digit);
        }
    }
    if digits.is_empty() {
        log::warn!("degree-sequence value decodes to an empty sequence");
    }
    Ok(DegreeSequence::new(digits))
}

type Rat = BigRational;

fn rat_from_f64(v: f64) -> Result<Rat> {
    Rat::from_float(v).ok_or_else(|| Error::Numerical(format!("{v} has no rational value")))
}

/// The average-coupling weight matrix with exact entries.
fn exact_average_weights(g: &DirectedGraph, theta: f64) -> Result<Vec<Vec<Rat>>> {
    check_open_unit("theta", theta)?;
    let theta = rat_from_f64(theta)?;
    let ids = g.ids();
    let n = ids.len();
    let mut w = vec![vec![Rat::zero(); n]; n];
    for (i, &id) in ids.iter().enumerate() {
        let d = g.in_degree(id);
        if d == 0 {
            return Err(Error::assumption(format!("node {id} has in-degree 0")));
        }
        let share = (Rat::one() - &theta) / Rat::from_integer(BigInt::from(d));
        w[i][i] = theta.clone();
        for j in g.in_neighbors(id) {
            let col = g.index_of(j).expect("neighbour in graph");
            w[i][col] = share.clone();
        }
    }
    Ok(w)
}

/// Results of the exact-arithmetic degree-sequence run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDegSeq {
    /// Equilibrium of the blended map, computed in exact arithmetic.
    pub blended_fixed_point: Rat,
    /// The closed form `sum d_i N^{X_i - 1}`.
    pub s_star: BigUint,
    /// Exact fixed point of the macro map `x -> W^{K-1} F(x)`.
    pub macro_fixed_point: Vec<Rat>,
    /// State after `horizon` exact macro steps.
    pub final_state: Vec<Rat>,
    pub decoded: DegreeSequence,
}

impl ExactDegSeq {
    /// `max_i |x_i^* - s*|` of the macro fixed point, as a float.
    pub fn fixed_point_gap(&self) -> f64 {
        let s = Rat::from_integer(BigInt::from(self.s_star.clone()));
        self.macro_fixed_point
            .iter()
            .map(|x| (x - &s).abs().to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

/// Run the degree-sequence algorithm entirely in rationals.
pub fn degseq_exact(
    g: &DirectedGraph,
    cfg: &DegSeq,
    theta: f64,
    steps: usize,
    horizon: usize,
    initial: &[f64],
) -> Result<ExactDegSeq> {
    if steps == 0 {
        return Err(Error::Parameter {
            name: "K",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let enc = cfg.encoding(g)?;
    let n = enc.len();
    if initial.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: initial.len(),
        });
    }
    let nn = BigInt::from(n);
    let a: Vec<Rat> = enc
        .iter()
        .map(|&(d, _)| Rat::one() - Rat::new(BigInt::one(), BigInt::from(d)))
        .collect();
    let b: Vec<Rat> = enc.iter().map(|&(_, x)| Rat::from_integer(nn.pow(x))).collect();
    let w = exact_average_weights(g, theta)?;

    // blended map with p = 1, q = d / d_sum
    let d_sum: usize = enc.iter().map(|e| e.0).sum();
    let q: Vec<Rat> = enc
        .iter()
        .map(|&(d, _)| Rat::new(BigInt::from(d), BigInt::from(d_sum)))
        .collect();
    let a_s: Rat = q.iter().zip(&a).map(|(qi, ai)| qi * ai).sum();
    let b_s: Rat = q.iter().zip(&b).map(|(qi, bi)| qi * bi).sum();
    let blended_fixed_point = b_s / (Rat::one() - a_s);

    let macro_matrix = |v: &[Rat]| -> Vec<Rat> {
        let mut x = v.to_vec();
        for _ in 1..steps {
            x = (0..n)
                .map(|i| (0..n).map(|j| &w[i][j] * &x[j]).sum())
                .collect();
        }
        x
    };

    // x* = W^{K-1} (diag(a) x* + b)  <=>  (I - W^{K-1} diag(a)) x* = W^{K-1} b
    let wb = macro_matrix(&b);
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![Rat::zero(); n];
        e[j] = a[j].clone();
        cols.push(macro_matrix(&e));
    }
    let mut system: Vec<Vec<Rat>> = (0..n)
        .map(|i| {
            let mut row: Vec<Rat> = (0..n)
                .map(|j| {
                    let id = if i == j { Rat::one() } else { Rat::zero() };
                    id - &cols[j][i]
                })
                .collect();
            row.push(wb[i].clone());
            row
        })
        .collect();
    let macro_fixed_point = solve_exact(&mut system)?;

    let x0: Vec<Rat> = initial.iter().map(|&v| rat_from_f64(v)).collect::<Result<_>>()?;
    let x = evolve_exact(&w, &a, &b, steps, horizon, &x0);

    let b_max = enc.iter().map(|e| e.1).max().unwrap_or(0);
    let b_min = enc.iter().map(|e| e.1).min().unwrap_or(1);
    let decoded = degseq_decode_exact(&macro_fixed_point[0], n, b_max, b_min)?;
    Ok(ExactDegSeq {
        blended_fixed_point,
        s_star: cfg.fixed_point(g)?,
        macro_fixed_point,
        final_state: x,
        decoded,
    })
}

fn common_denominator<'a>(values: impl IntoIterator<Item = &'a Rat>) -> BigInt {
    values.into_iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

/// Exact macro steps `x -> W^{K-1} (diag(a) x + b)`.
///
/// The state is kept as integer numerators over one shared denominator and
/// reduced once per macro step; normalising every rational operation instead
/// costs a gcd of ever longer integers at each multiply-add.
fn evolve_exact(w: &[Vec<Rat>], a: &[Rat], b: &[Rat], steps: usize, horizon: usize, x0: &[Rat]) -> Vec<Rat> {
    let n = x0.len();
    let dw = common_denominator(w.iter().flatten());
    let wn: Vec<Vec<BigInt>> = w
        .iter()
        .map(|row| row.iter().map(|v| (v * Rat::from_integer(dw.clone())).to_integer()).collect())
        .collect();
    let da = common_denominator(a.iter().chain(b));
    let an: Vec<BigInt> = a.iter().map(|v| (v * Rat::from_integer(da.clone())).to_integer()).collect();
    let bn: Vec<BigInt> = b.iter().map(|v| (v * Rat::from_integer(da.clone())).to_integer()).collect();

    let mut den = common_denominator(x0);
    let mut num: Vec<BigInt> = x0.iter().map(|v| (v * Rat::from_integer(den.clone())).to_integer()).collect();
    for _ in 0..horizon {
        num = (0..n).map(|i| &an[i] * &num[i] + &bn[i] * &den).collect();
        den *= &da;
        for _ in 1..steps {
            num = (0..n)
                .map(|i| (0..n).filter(|&j| !wn[i][j].is_zero()).map(|j| &wn[i][j] * &num[j]).sum())
                .collect();
            den *= &dw;
        }
        let g = num.iter().fold(den.clone(), |g, v| g.gcd(v));
        if !g.is_one() {
            num.iter_mut().for_each(|v| *v /= &g);
            den /= &g;
        }
    }
    num.into_iter().map(|v| Rat::new(v, den.clone())).collect()
}

/// Gauss-Jordan elimination on an augmented `n x (n+1)` rational system.
fn solve_exact(m: &mut [Vec<Rat>]) -> Result<Vec<Rat>> {
    let n = m.len();
    for c in 0..n {
        let pivot = (c..n)
            .find(|&r| !m[r][c].is_zero())
            .ok_or_else(|| Error::Numerical("singular fixed-point system".into()))?;
        m.swap(c, pivot);
        let inv = m[c][c].recip();
        for v in m[c].iter_mut() {
            *v = &*v * &inv;
        }
        let pivot_row = m[c].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != c && !row[c].is_zero() {
                let f = row[c].clone();
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= &f * p;
                }
            }
        }
    }
    Ok(m.iter().map(|row| row[n].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::BlendedDynamics;
    use crate::spectral::perron_pair_default;
    use crate::weights;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn blended_affine(g: &DirectedGraph, family: &dyn DynamicsFamily, w: &weights::WeightMatrix) -> (f64, f64) {
        let pair = perron_pair_default(w).unwrap();
        let bd = BlendedDynamics::new(family.build(g).unwrap(), &pair).unwrap();
        let map = bd.affine().unwrap();
        (map.a[(0, 0)], map.b[0])
    }

    #[test]
    fn netsize_blended_map() {
        let g = DirectedGraph::generate_connected(4, 0.6, 5, true).unwrap();
        let ns = NetSize::new(&g, None).unwrap();
        assert_eq!(ns.anchor, NodeId(1));
        let w = weights::metropolis_hastings(&g, 0.5).unwrap();
        let (a, b) = blended_affine(&g, &ns, &w);
        assert_abs_diff_eq!(a, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b / (1.0 - a), 4.0, epsilon = 1e-10);

        let single = DirectedGraph::undirected([NodeId(1)], []).unwrap();
        let fs = NetSize::new(&single, None).unwrap().build(&single).unwrap();
        assert_eq!(fs[0].eval(0, &DVector::from_element(1, 7.0))[0], 1.0);

        assert!(NetSize::new(&g, Some(NodeId(99))).is_err());
        assert_eq!(ns.protected(), vec![NodeId(1)]);
    }

    #[test]
    fn pagerank_blended_map() {
        let g = DirectedGraph::generate_connected(6, 0.4, 2, false).unwrap();
        let w = weights::pagerank_coupling(&g, 0.15).unwrap();
        for nu in [0.1, 0.5, 0.9] {
            let pr = PageRank::new(nu, None).unwrap();
            let (a, b) = blended_affine(&g, &pr, &w);
            assert_abs_diff_eq!(a, nu, epsilon = 1e-12);
            assert_abs_diff_eq!(b, 1.0 - nu, epsilon = 1e-12);
        }
        assert!(PageRank::new(1.0, None).is_err());
        assert!(PageRank::new(0.5, Some(0)).is_err());
    }

    #[test]
    fn degseq_fixed_points() {
        let path = DirectedGraph::path(3);
        let cfg = DegSeq::new([(NodeId(1), 2), (NodeId(2), 3), (NodeId(3), 4)].into(), Arithmetic::Floating);
        assert_eq!(cfg.fixed_point(&path).unwrap(), BigUint::from(48u32));

        let edge = DirectedGraph::path(2);
        let cfg2 = DegSeq::default_ids(Arithmetic::Floating);
        assert_eq!(cfg2.fixed_point(&edge).unwrap(), BigUint::from(6u32));

        let w = weights::average_coupling(&path, 0.5).unwrap();
        let (a, b) = blended_affine(&path, &cfg, &w);
        assert_abs_diff_eq!(a, 1.0 - 3.0 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b / (1.0 - a), 48.0, epsilon = 1e-9);
    }

    #[test]
    fn degseq_validation() {
        let path = DirectedGraph::path(3);
        let dup = DegSeq::new([(NodeId(1), 2), (NodeId(2), 2)].into(), Arithmetic::Floating);
        assert!(dup.encoding(&path).is_err());
        let low = DegSeq::new([(NodeId(1), 1)].into(), Arithmetic::Floating);
        assert!(low.encoding(&path).is_err());
        let big = DegSeq::new([(NodeId(1), 40)].into(), Arithmetic::Floating);
        assert!(big.build(&path).is_err());
        let exact = DegSeq::new([(NodeId(1), 40)].into(), Arithmetic::Exact);
        assert!(exact.build(&path).is_ok());
        assert!(DegSeq::default_ids(Arithmetic::Floating)
            .encoding(&DirectedGraph::directed_cycle(3))
            .is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(degseq_decode(48.0, 3, 4).unwrap().as_slice(), &[2, 1, 1]);
        assert_eq!(degseq_decode(47.6, 3, 4).unwrap().as_slice(), &[2, 1, 1]);
        assert!(degseq_decode(0.0, 3, 4).unwrap().is_empty());
        assert_eq!(degseq_decode(4680.0, 5, 6).unwrap().as_slice(), &[2, 2, 2, 1, 1]);
        assert!(degseq_decode(81.0, 3, 4).is_err());
        assert!(degseq_decode(f64::NAN, 3, 4).is_err());
        // error 0.8: plain rounding is off by one, the aligned decoder is not
        assert_ne!(degseq_decode(47.2, 3, 4).unwrap().as_slice(), &[2, 1, 1]);
        assert_eq!(degseq_decode_aligned(47.2, 3, 4, 2).unwrap().as_slice(), &[2, 1, 1]);
        assert_eq!(degseq_decode_aligned(4680.9, 5, 6, 2).unwrap().as_slice(), &[2, 2, 2, 1, 1]);
        let r = Rat::new(BigInt::from(9359), BigInt::from(2));
        assert_eq!(degseq_decode_exact(&r, 5, 6, 1).unwrap().as_slice(), &[2, 2, 2, 1, 1]);
        let r = Rat::new(BigInt::from(46809), BigInt::from(10));
        assert_eq!(degseq_decode_exact(&r, 5, 6, 2).unwrap().as_slice(), &[2, 2, 2, 1, 1]);
    }

    #[test]
    fn exact_mode_on_short_path() {
        let path = DirectedGraph::path(3);
        let cfg = DegSeq::new([(NodeId(1), 2), (NodeId(2), 3), (NodeId(3), 4)].into(), Arithmetic::Exact);
        let out = degseq_exact(&path, &cfg, 0.5, 12, 30, &[0.0; 3]).unwrap();
        assert_eq!(out.blended_fixed_point, Rat::from_integer(BigInt::from(48)));
        assert!(out.fixed_point_gap() < 1.0);
        assert_eq!(out.decoded.as_slice(), &[2, 1, 1]);
    }

    #[test]
    fn shared_denominator_evolution_matches_rationals() {
        let g = DirectedGraph::path(4);
        let w = exact_average_weights(&g, 0.3).unwrap();
        let r = |p: i64, q: i64| Rat::new(BigInt::from(p), BigInt::from(q));
        let a = vec![r(1, 2), r(2, 3), r(-1, 5), r(0, 1)];
        let b = vec![r(3, 1), r(1, 7), r(-2, 1), r(5, 2)];
        let x0 = vec![r(1, 3), r(0, 1), r(-7, 4), r(9, 1)];
        let (steps, horizon) = (4, 6);
        let mut x = x0.clone();
        for _ in 0..horizon {
            x = x.iter().zip(&a).zip(&b).map(|((xi, ai), bi)| ai * xi + bi).collect();
            for _ in 1..steps {
                x = (0..4).map(|i| (0..4).map(|j| &w[i][j] * &x[j]).sum()).collect();
            }
        }
        assert_eq!(evolve_exact(&w, &a, &b, steps, horizon, &x0), x);
    }
}
