//! Multi-step coupling execution over fractional time.
//!
//! One integer round `t -> t + 1` runs the node dynamics once and then the
//! coupling step `x <- (W (x) I_n) x` exactly `K - 1` times. The fractional
//! index advances `0_0, 0_1, ..., 0_{K-1}, 1_0, ...`.
//!
//! States are stored as an `N x n` matrix with one row per node in ascending
//! id order, so the Kronecker products `(M (x) I_n) x` become plain `M X`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, GraphEvent, NodeId};
use crate::linalg::op_norm;
use crate::spectral::{self, PerronPair, SpectralDecomposition};
use crate::weights::{self, CouplingKind, WeightMatrix, WEIGHT_TOL};

/// `(t, k)` with `t_k = t + k / K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FractionalTime {
    pub t: i64,
    pub k: usize,
    #[serde(skip)]
    pub steps: usize,
}

impl FractionalTime {
    pub fn new(t: i64, k: usize, steps: usize) -> Self {
        assert!(steps >= 1 && k < steps, "fraction count {k} out of range for K = {steps}");
        FractionalTime { t, k, steps }
    }

    /// `(t, K-1)` is followed by `(t+1, 0)`.
    pub fn succ(self) -> Self {
        if self.k + 1 == self.steps {
            FractionalTime::new(self.t + 1, 0, self.steps)
        } else {
            FractionalTime::new(self.t, self.k + 1, self.steps)
        }
    }

    pub fn as_f64(self) -> f64 {
        self.t as f64 + self.k as f64 / self.steps as f64
    }
}

impl fmt::Display for FractionalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.t, self.k)
    }
}

pub type UpdateFn = Arc<dyn Fn(i64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type BoundFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `f(t, x) = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn scalar(a: f64, b: f64) -> Self {
        AffineMap {
            a: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, b),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }
}

/// Per-agent update map together with its Lipschitz constant `L` and a
/// non-decreasing bound `M(r) >= ||f(t, x)||` for `||x|| <= r`.
#[derive(Clone)]
pub struct NodeDynamics {
    dim: usize,
    update: UpdateFn,
    lipschitz: f64,
    bound: BoundFn,
    affine: Option<AffineMap>,
}

impl fmt::Debug for NodeDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeDynamics")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("affine", &self.affine)
            .finish_non_exhaustive()
    }
}

impl NodeDynamics {
    pub fn new(dim: usize, update: UpdateFn, lipschitz: f64, bound: BoundFn) -> Self {
        NodeDynamics {
            dim,
            update,
            lipschitz,
            bound,
            affine: None,
        }
    }

    /// Time-invariant affine dynamics; `L = ||A||` and `M(r) = ||A|| r + ||b||`.
    pub fn affine(map: AffineMap) -> Self {
        let norm_a = op_norm(&map.a);
        let norm_b = map.b.norm();
        let m = map.clone();
        NodeDynamics {
            dim: map.b.len(),
            update: Arc::new(move |_, x| m.eval(x)),
            lipschitz: norm_a,
            bound: Arc::new(move |r| norm_a * r + norm_b),
            affine: Some(map),
        }
    }

    pub fn scalar_affine(a: f64, b: f64) -> Self {
        Self::affine(AffineMap::scalar(a, b))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: i64, x: &DVector<f64>) -> DVector<f64> {
        (self.update)(t, x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bound(&self, r: f64) -> f64 {
        (self.bound)(r)
    }

    pub fn affine_parts(&self) -> Option<&AffineMap> {
        self.affine.as_ref()
    }
}

/// Common Lipschitz constant of a family (the max over agents).
pub fn common_lipschitz(dynamics: &[NodeDynamics]) -> f64 {
    dynamics.iter().map(NodeDynamics::lipschitz).fold(0.0, f64::max)
}

/// Common bound `M(r) = max_i M_i(r)`.
pub fn common_bound(dynamics: &[NodeDynamics], r: f64) -> f64 {
    dynamics.iter().map(|d| d.bound(r)).fold(0.0, f64::max)
}

/// Builds node dynamics for the current topology. Families are rebuilt after
/// every membership event since the maps may depend on degrees or `N`.
pub trait DynamicsFamily: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn build(&self, g: &DirectedGraph) -> Result<Vec<NodeDynamics>>;
    /// Nodes that may never leave.
    fn protected(&self) -> Vec<NodeId> {
        Vec::new()
    }
}

/// The same affine map on every node unless overridden per id.
#[derive(Debug, Clone)]
pub struct AffineFamily {
    pub default: AffineMap,
    pub per_node: BTreeMap<NodeId, AffineMap>,
}

impl AffineFamily {
    pub fn uniform(map: AffineMap) -> Self {
        AffineFamily {
            default: map,
            per_node: BTreeMap::new(),
        }
    }
}

impl DynamicsFamily for AffineFamily {
    fn name(&self) -> String {
        "custom".into()
    }

    fn dim(&self) -> usize {
        self.default.b.len()
    }

    fn build(&self, g: &DirectedGraph) -> Result<Vec<NodeDynamics>> {
        g.ids()
            .into_iter()
            .map(|id| {
                let map = self.per_node.get(&id).unwrap_or(&self.default);
                if map.b.len() != self.dim() || map.a.shape() != (self.dim(), self.dim()) {
                    return Err(Error::Dimension {
                        expected: self.dim(),
                        got: map.b.len(),
                    });
                }
                Ok(NodeDynamics::affine(map.clone()))
            })
            .collect()
    }
}

/// Stacked network state, one row per node in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub ids: Vec<NodeId>,
    pub x: DMatrix<f64>,
}

impl NetworkState {
    pub fn zeros(ids: Vec<NodeId>, dim: usize) -> Self {
        let n = ids.len();
        NetworkState {
            ids,
            x: DMatrix::zeros(n, dim),
        }
    }

    pub fn from_rows(ids: Vec<NodeId>, rows: &[DVector<f64>]) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Dimension {
                expected: ids.len(),
                got: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, |r| r.len());
        let mut x = DMatrix::zeros(ids.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: r.len(),
                });
            }
            x.set_row(i, &r.transpose());
        }
        Ok(NetworkState { ids, x })
    }

    pub fn scalar(ids: Vec<NodeId>, values: &[f64]) -> Result<Self> {
        let rows: Vec<DVector<f64>> = values.iter().map(|&v| DVector::from_element(1, v)).collect();
        Self::from_rows(ids, &rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn node(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// `[x_1^T, ..., x_N^T]^T`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.transpose().iter().copied())
    }
}

/// `F(t, x)`: every node applies its own map.
pub fn apply_dynamics(x: &DMatrix<f64>, t: i64, dynamics: &[NodeDynamics]) -> Result<DMatrix<f64>> {
    if dynamics.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: dynamics.len(),
        });
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, f) in dynamics.iter().enumerate() {
        let xi = x.row(i).transpose();
        let next = f.eval(t, &xi);
        if next.len() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                got: next.len(),
            });
        }
        out.set_row(i, &next.transpose());
    }
    Ok(out)
}

/// `x_i[t_1] = f_i(t, x_i[t_0])`.
pub fn node_step(state: &NetworkState, t: i64, dynamics: &[NodeDynamics]) -> Result<NetworkState> {
    Ok(NetworkState {
        ids: state.ids.clone(),
        x: apply_dynamics(&state.x, t, dynamics)?,
    })
}

/// `x_i <- sum_j w_ij x_j`.
pub fn coupling_step(state: &NetworkState, w: &WeightMatrix) -> Result<NetworkState> {
    if w.len() != state.len() {
        return Err(Error::Dimension {
            expected: state.len(),
            got: w.len(),
        });
    }
    Ok(NetworkState {
        ids: state.ids.clone(),
        x: w.matrix() * &state.x,
    })
}

/// One node step followed by `K - 1` coupling steps.
pub fn macro_step(
    state: &NetworkState,
    t: i64,
    dynamics: &[NodeDynamics],
    w: &WeightMatrix,
    steps: usize,
) -> Result<NetworkState> {
    if steps == 0 {
        return Err(Error::Parameter {
            name: "K",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let mut next = node_step(state, t, dynamics)?;
    for _ in 1..steps {
        next = coupling_step(&next, w)?;
    }
    Ok(next)
}

/// `f_s(t, s) = sum_i q_i f_i(t, p_i s)`.
#[derive(Debug, Clone)]
pub struct BlendedDynamics {
    pub dynamics: Vec<NodeDynamics>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

impl BlendedDynamics {
    pub fn new(dynamics: Vec<NodeDynamics>, pair: &PerronPair) -> Result<Self> {
        if dynamics.len() != pair.len() {
            return Err(Error::Dimension {
                expected: pair.len(),
                got: dynamics.len(),
            });
        }
        Ok(BlendedDynamics {
            dynamics,
            p: pair.p.clone(),
            q: pair.q.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.first().map_or(0, NodeDynamics::dim)
    }

    pub fn eval(&self, t: i64, s: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(s.len());
        for ((f, &pi), &qi) in self.dynamics.iter().zip(self.p.iter()).zip(self.q.iter()) {
            acc += f.eval(t, &(s * pi)) * qi;
        }
        acc
    }

    /// Closed form `A_s s + b_s` when every node map is affine.
    pub fn affine(&self) -> Option<AffineMap> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for ((f, &pi), &qi) in self.dynamics.iter().zip(self.p.iter()).zip(self.q.iter()) {
            let map = f.affine_parts()?;
            a += &map.a * (qi * pi);
            b += &map.b * qi;
        }
        Some(AffineMap { a, b })
    }

    /// `q^T F(t, x)` for an arbitrary network state (the seed `s[1]`).
    pub fn project(&self, t: i64, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let fx = apply_dynamics(x, t, &self.dynamics)?;
        Ok(fx.transpose() * &self.q)
    }
}

/// `s[t+1] = f_s(t, s[t])`.
pub fn blended_step(s: &DVector<f64>, t: i64, bd: &BlendedDynamics) -> DVector<f64> {
    bd.eval(t, s)
}

/// `xi_1 = (q^T (x) I) x`, `xi~ = (Z^T (x) I) x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedState {
    pub xi1: DVector<f64>,
    /// (N-1) x n; row `j` is the j-th block of the stacked vector.
    pub xitilde: DMatrix<f64>,
}

impl TransformedState {
    /// `(p (x) I) xi_1 + (R (x) I) xi~`.
    pub fn inverse(&self, dec: &SpectralDecomposition) -> DMatrix<f64> {
        &dec.pair.p * self.xi1.transpose() + &dec.r * &self.xitilde
    }

    pub fn xitilde_norm(&self) -> f64 {
        self.xitilde.norm()
    }
}

pub fn transform(state: &NetworkState, dec: &SpectralDecomposition) -> Result<TransformedState> {
    transform_matrix(&state.x, dec)
}

pub(crate) fn transform_matrix(x: &DMatrix<f64>, dec: &SpectralDecomposition) -> Result<TransformedState> {
    if x.nrows() != dec.len() {
        return Err(Error::Dimension {
            expected: dec.len(),
            got: x.nrows(),
        });
    }
    Ok(TransformedState {
        xi1: x.transpose() * &dec.pair.q,
        xitilde: dec.z.transpose() * x,
    })
}

/// How the weight matrix is obtained for each topology.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    MetropolisHastings(f64),
    Pagerank(f64),
    Average(f64),
    /// A fixed, user-supplied matrix. Cannot be rebuilt after membership events.
    Custom(WeightMatrix),
}

impl Coupling {
    pub fn kind(&self) -> CouplingKind {
        match self {
            Coupling::MetropolisHastings(_) => CouplingKind::MetropolisHastings,
            Coupling::Pagerank(_) => CouplingKind::Pagerank,
            Coupling::Average(_) => CouplingKind::Average,
            Coupling::Custom(_) => CouplingKind::Custom,
        }
    }

    pub fn build(&self, g: &DirectedGraph) -> Result<WeightMatrix> {
        match self {
            Coupling::MetropolisHastings(mu) => weights::metropolis_hastings(g, *mu),
            Coupling::Pagerank(m) => weights::pagerank_coupling(g, *m),
            Coupling::Average(theta) => weights::average_coupling(g, *theta),
            Coupling::Custom(w) => {
                if w.ids() != g.ids().as_slice() {
                    return Err(Error::assumption("custom weight matrix does not match the node set"));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Record every fractional step or only integer counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Fraction,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub t: i64,
    pub event: GraphEvent,
    /// Initial state of a joining node (zero when absent).
    pub state: Option<DVector<f64>>,
}

#[derive(Clone)]
pub struct Scenario {
    pub graph: DirectedGraph,
    pub coupling: Coupling,
    pub family: Arc<dyn DynamicsFamily>,
    pub steps_per_round: usize,
    pub horizon: i64,
    /// Initial states by id; missing nodes start at zero.
    pub initial: BTreeMap<NodeId, DVector<f64>>,
    pub events: Vec<ScheduledEvent>,
    pub granularity: Granularity,
    /// Scale `c` of the Perron pair used for the blended reference, `(c p, q / c)`.
    pub perron_scale: f64,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("family", &self.family.name())
            .field("coupling", &self.coupling)
            .field("K", &self.steps_per_round)
            .field("horizon", &self.horizon)
            .field("events", &self.events)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn new(graph: DirectedGraph, coupling: Coupling, family: Arc<dyn DynamicsFamily>, steps: usize, horizon: i64) -> Self {
        Scenario {
            graph,
            coupling,
            family,
            steps_per_round: steps,
            horizon,
            initial: BTreeMap::new(),
            events: Vec::new(),
            granularity: Granularity::Fraction,
            perron_scale: 1.0,
        }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Scenario {
            steps_per_round: steps,
            ..self.clone()
        }
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    /// Set scalar initial states in node order.
    pub fn with_scalar_initial(mut self, values: &[f64]) -> Self {
        self.initial = self
            .graph
            .ids()
            .into_iter()
            .zip(values)
            .map(|(id, &v)| (id, DVector::from_element(1, v)))
            .collect();
        self
    }
}

/// Everything that is fixed between two membership events.
#[derive(Debug, Clone)]
pub struct Epoch {
    pub start: i64,
    pub graph: DirectedGraph,
    pub weights: WeightMatrix,
    pub pair: PerronPair,
    pub dynamics: Vec<NodeDynamics>,
}

impl Epoch {
    fn build(start: i64, graph: DirectedGraph, scenario: &Scenario) -> Result<Self> {
        if !graph.is_strongly_connected() {
            return Err(Error::assumption("Assumption 2 violated: graph is not strongly connected").at(start));
        }
        let w = scenario.coupling.build(&graph).map_err(|e| e.at(start))?;
        let report = weights::validate(&w, &graph, WEIGHT_TOL);
        if !report.is_valid() {
            return Err(Error::assumption(format!("weight matrix invalid: {:?}", report.violations)).at(start));
        }
        let pair = spectral::perron_pair_default(&w).map_err(|e| e.at(start))?;
        let pair = if scenario.perron_scale == 1.0 {
            pair
        } else {
            pair.rescaled(scenario.perron_scale)
        };
        let dynamics = scenario.family.build(&graph).map_err(|e| e.at(start))?;
        if dynamics.len() != graph.len() {
            return Err(Error::Dimension {
                expected: graph.len(),
                got: dynamics.len(),
            }
            .at(start));
        }
        Ok(Epoch {
            start,
            graph,
            weights: w,
            pair,
            dynamics,
        })
    }

    pub fn blended(&self) -> BlendedDynamics {
        BlendedDynamics {
            dynamics: self.dynamics.clone(),
            p: self.pair.p.clone(),
            q: self.pair.q.clone(),
        }
    }

    pub fn decomposition(&self) -> Result<SpectralDecomposition> {
        spectral::decompose(&self.weights, &self.pair)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub steps_per_round: usize,
    pub dim: usize,
    pub horizon: i64,
    pub records: Vec<(FractionalTime, NetworkState)>,
    /// `(t, s[t])` for `t >= 1`.
    pub blended: Vec<(i64, DVector<f64>)>,
    pub events_applied: Vec<(i64, GraphEvent)>,
    pub epochs: Vec<Epoch>,
}

impl SimulationTrace {
    /// States at integer counts `(t, 0)`.
    pub fn integer_states(&self) -> impl Iterator<Item = (i64, &NetworkState)> {
        self.records.iter().filter(|(ft, _)| ft.k == 0).map(|(ft, s)| (ft.t, s))
    }

    pub fn state_at(&self, t: i64, k: usize) -> Option<&NetworkState> {
        self.records.iter().find(|(ft, _)| ft.t == t && ft.k == k).map(|(_, s)| s)
    }

    pub fn blended_at(&self, t: i64) -> Option<&DVector<f64>> {
        // blended holds t = 1, 2, ... contiguously
        let first = self.blended.first()?.0;
        let idx = usize::try_from(t - first).ok()?;
        self.blended.get(idx).filter(|(bt, _)| *bt == t).map(|(_, s)| s)
    }

    pub fn final_state(&self) -> &NetworkState {
        &self.records.last().expect("trace always holds the initial state").1
    }

    /// Epoch governing integer time `t`.
    pub fn epoch_at(&self, t: i64) -> &Epoch {
        self.epochs
            .iter()
            .rev()
            .find(|e| e.start <= t)
            .expect("first epoch starts at 0")
    }

    /// CSV with columns `t,k,node_id,x0..`; blended rows use `node_id = s`.
    pub fn to_csv(&self, header: &TraceHeader) -> String {
        let mut out = format!(
            "# scenario_hash={} K={} coupling={} seed={}\n",
            header.scenario_hash, self.steps_per_round, header.coupling, header.seed
        );
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut cols = vec!["t".to_string(), "k".into(), "node_id".into()];
        cols.extend((0..self.dim).map(|c| format!("x{c}")));
        w.write_record(&cols).expect("in-memory write");
        for (ft, state) in &self.records {
            for (i, id) in state.ids.iter().enumerate() {
                let mut row = vec![ft.t.to_string(), ft.k.to_string(), id.to_string()];
                row.extend(state.x.row(i).iter().map(|v| v.to_string()));
                w.write_record(&row).expect("in-memory write");
            }
            if ft.k == 0 {
                if let Some(s) = self.blended_at(ft.t) {
                    let mut row = vec![ft.t.to_string(), "0".to_string(), "s".to_string()];
                    row.extend(s.iter().map(|v| v.to_string()));
                    w.write_record(&row).expect("in-memory write");
                }
            }
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    /// Blended reference alone: `t,s0..`.
    pub fn blended_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut cols = vec!["t".to_string()];
        cols.extend((0..self.dim).map(|c| format!("s{c}")));
        w.write_record(&cols).expect("in-memory write");
        for (t, s) in &self.blended {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Provenance written at the top of trace files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub scenario_hash: String,
    pub coupling: CouplingKind,
    pub seed: u64,
}

fn initial_state(scenario: &Scenario, ids: Vec<NodeId>, dim: usize) -> Result<NetworkState> {
    let mut state = NetworkState::zeros(ids, dim);
    for (id, v) in &scenario.initial {
        let Some(i) = state.ids.iter().position(|x| x == id) else {
            return Err(Error::Config(format!("initial state for unknown node {id}")));
        };
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
        state.x.set_row(i, &v.transpose());
    }
    Ok(state)
}

/// Carry surviving rows over to the new node set; joiners use `joined`.
fn remap_state(state: &NetworkState, ids: Vec<NodeId>, joined: &BTreeMap<NodeId, DVector<f64>>) -> NetworkState {
    let dim = state.dim();
    let mut next = NetworkState::zeros(ids, dim);
    for (i, id) in next.ids.clone().iter().enumerate() {
        if let Some(old) = state.ids.iter().position(|x| x == id) {
            next.x.set_row(i, &state.x.row(old));
        } else if let Some(v) = joined.get(id) {
            next.x.set_row(i, &v.transpose());
        }
    }
    next
}

/// Run a scenario to its horizon.
///
/// The blended reference starts at `s[1] = q^T F(0, x[0])`. After a
/// membership event at `t` the weights, Perron pair and node maps are rebuilt
/// and the reference is re-seeded with `s[t+1] = q^T F(t, x[t])` over the new
/// node set.
pub fn simulate(scenario: &Scenario) -> Result<SimulationTrace> {
    let steps = scenario.steps_per_round;
    if steps == 0 {
        return Err(Error::Parameter {
            name: "K",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    if scenario.horizon < 0 {
        return Err(Error::Config("horizon must be non-negative".into()));
    }
    let mut events = scenario.events.clone();
    events.sort_by_key(|e| e.t);
    if let Some(e) = events.iter().find(|e| e.t < 1 || e.t >= scenario.horizon) {
        return Err(Error::Config(format!("event at t = {} outside [1, horizon)", e.t)));
    }
    let dim = scenario.family.dim();
    let protected = scenario.family.protected();

    let mut epoch = Epoch::build(0, scenario.graph.clone(), scenario)?;
    let mut state = initial_state(scenario, epoch.graph.ids(), dim)?;
    let mut trace = SimulationTrace {
        steps_per_round: steps,
        dim,
        horizon: scenario.horizon,
        records: Vec::new(),
        blended: Vec::new(),
        events_applied: Vec::new(),
        epochs: vec![epoch.clone()],
    };
    let mut blended = epoch.blended();
    let mut s: Option<DVector<f64>> = None;
    let mut pending = events.into_iter().peekable();

    for t in 0..scenario.horizon {
        let mut joined = BTreeMap::new();
        let mut graph = epoch.graph.clone();
        let mut changed = false;
        while let Some(ev) = pending.next_if(|e| e.t == t) {
            graph = graph.mutate_protected(&ev.event, &protected).map_err(|e| e.at(t))?;
            if let GraphEvent::Join { id, .. } = &ev.event {
                joined.insert(*id, ev.state.clone().unwrap_or_else(|| DVector::zeros(dim)));
            }
            log::info!("t = {t}: applied {:?}", ev.event);
            trace.events_applied.push((t, ev.event));
            changed = true;
        }
        if changed {
            epoch = Epoch::build(t, graph, scenario)?;
            state = remap_state(&state, epoch.graph.ids(), &joined);
            blended = epoch.blended();
            trace.epochs.push(epoch.clone());
        }
        trace.records.push((FractionalTime::new(t, 0, steps), state.clone()));

        let next_s = match (&s, t == epoch.start) {
            (Some(prev), false) => blended_step(prev, t, &blended),
            _ => blended.project(t, &state.x).map_err(|e| e.at(t))?,
        };
        trace.blended.push((t + 1, next_s.clone()));
        s = Some(next_s);

        let mut x = node_step(&state, t, &epoch.dynamics).map_err(|e| e.at(t))?;
        for k in 1..steps {
            if scenario.granularity == Granularity::Fraction {
                trace.records.push((FractionalTime::new(t, k, steps), x.clone()));
            }
            x = coupling_step(&x, &epoch.weights)?;
        }
        if !x.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("state diverged to a non-finite value".into()).at(t));
        }
        state = x;
    }
    trace
        .records
        .push((FractionalTime::new(scenario.horizon, 0, steps), state));
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::perron_pair_default;
    use approx::assert_abs_diff_eq;

    fn ids(n: u64) -> Vec<NodeId> {
        (1..=n).map(NodeId).collect()
    }

    #[test]
    fn fractional_time_order() {
        let mut ft = FractionalTime::new(0, 0, 3);
        let mut seen = vec![ft];
        for _ in 0..4 {
            ft = ft.succ();
            seen.push(ft);
        }
        let pairs: Vec<(i64, usize)> = seen.iter().map(|f| (f.t, f.k)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(FractionalTime::new(2, 0, 1).succ(), FractionalTime::new(3, 0, 1));
    }

    #[test]
    fn node_steps() {
        let state = NetworkState::scalar(ids(2), &[5.0, 5.0]).unwrap();
        let identity = vec![NodeDynamics::scalar_affine(1.0, 0.0); 2];
        assert_eq!(node_step(&state, 0, &identity).unwrap(), state);

        let netsize = vec![NodeDynamics::scalar_affine(0.0, 1.0), NodeDynamics::scalar_affine(1.0, 1.0)];
        let next = node_step(&state, 0, &netsize).unwrap();
        assert_eq!(next.x.as_slice(), &[1.0, 6.0]);

        let zero = vec![NodeDynamics::scalar_affine(0.0, 0.0); 2];
        assert_eq!(node_step(&state, 0, &zero).unwrap().x.as_slice(), &[0.0, 0.0]);

        assert!(node_step(&state, 0, &zero[..1]).is_err());
    }

    #[test]
    fn coupling_preserves_consensus_and_sum() {
        let g = DirectedGraph::generate_connected(6, 0.5, 3, true).unwrap();
        let w = weights::metropolis_hastings(&g, 0.5).unwrap();
        let fixed = NetworkState::scalar(g.ids(), &[2.5; 6]).unwrap();
        let after = coupling_step(&fixed, &w).unwrap();
        for v in after.x.iter() {
            assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-14);
        }
        let state = NetworkState::scalar(g.ids(), &[1.0, -2.0, 3.0, 0.5, 7.0, -1.5]).unwrap();
        let after = coupling_step(&state, &w).unwrap();
        assert_abs_diff_eq!(after.x.sum(), state.x.sum(), epsilon = 1e-13);
    }

    #[test]
    fn pagerank_consensus_direction_is_fixed() {
        let g = DirectedGraph::generate_connected(5, 0.5, 8, false).unwrap();
        let w = weights::pagerank_coupling(&g, 0.15).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        let state = NetworkState {
            ids: g.ids(),
            x: &pair.p * DVector::from_vec(vec![2.0, -1.0]).transpose(),
        };
        let after = coupling_step(&state, &w).unwrap();
        assert!((after.x - &state.x).abs().max() < 1e-13);
    }

    #[test]
    fn macro_step_k1_is_node_step() {
        let g = DirectedGraph::path(3);
        let w = weights::metropolis_hastings(&g, 0.5).unwrap();
        let dynamics = vec![NodeDynamics::scalar_affine(0.5, 1.0); 3];
        let state = NetworkState::scalar(g.ids(), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            macro_step(&state, 0, &dynamics, &w, 1).unwrap(),
            node_step(&state, 0, &dynamics).unwrap()
        );
        let two = macro_step(&state, 0, &dynamics, &w, 2).unwrap();
        let manual = coupling_step(&node_step(&state, 0, &dynamics).unwrap(), &w).unwrap();
        assert_eq!(two, manual);
        assert!(macro_step(&state, 0, &dynamics, &w, 0).is_err());
    }

    #[test]
    fn transform_round_trip() {
        let g = DirectedGraph::generate_connected(5, 0.5, 1, false).unwrap();
        let w = weights::pagerank_coupling(&g, 0.15).unwrap();
        let dec = spectral::decompose(&w, &perron_pair_default(&w).unwrap()).unwrap();

        let c = DVector::from_vec(vec![1.5, -0.5]);
        let consensus = NetworkState {
            ids: g.ids(),
            x: &dec.pair.p * c.transpose(),
        };
        let tr = transform(&consensus, &dec).unwrap();
        assert!((tr.xi1 - &c).norm() < 1e-12);
        assert!(tr.xitilde.norm() < 1e-12);

        let v = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 2.0, -2.0]);
        let off = NetworkState { ids: g.ids(), x: &dec.r * &v };
        let tr = transform(&off, &dec).unwrap();
        assert!(tr.xi1.norm() < 1e-12);
        assert!((tr.xitilde - &v).norm() < 1e-12);
    }

    #[test]
    fn blended_affine_assembly() {
        let g = DirectedGraph::path(4);
        let w = weights::metropolis_hastings(&g, 0.5).unwrap();
        let pair = perron_pair_default(&w).unwrap();
        let dynamics = vec![
            NodeDynamics::scalar_affine(0.1, 0.0),
            NodeDynamics::scalar_affine(0.1, 0.0),
            NodeDynamics::scalar_affine(1.5, 0.0),
            NodeDynamics::scalar_affine(1.5, 0.0),
        ];
        let bd = BlendedDynamics::new(dynamics, &pair).unwrap();
        let map = bd.affine().unwrap();
        assert_abs_diff_eq!(map.a[(0, 0)], 0.8, epsilon = 1e-15);
        let s = DVector::from_element(1, 2.0);
        assert_abs_diff_eq!(blended_step(&s, 0, &bd)[0], 1.6, epsilon = 1e-15);
    }

    #[test]
    fn zero_horizon() {
        let g = DirectedGraph::path(3);
        let sc = Scenario::new(
            g.clone(),
            Coupling::MetropolisHastings(0.5),
            Arc::new(AffineFamily::uniform(AffineMap::scalar(0.5, 1.0))),
            4,
            0,
        )
        .with_scalar_initial(&[1.0, 2.0, 3.0]);
        let tr = simulate(&sc).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert!(tr.blended.is_empty());
        assert_eq!(tr.final_state().x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn record_layout() {
        let g = DirectedGraph::path(3);
        let mut sc = Scenario::new(
            g,
            Coupling::MetropolisHastings(0.5),
            Arc::new(AffineFamily::uniform(AffineMap::scalar(0.5, 1.0))),
            3,
            2,
        );
        let tr = simulate(&sc).unwrap();
        let idx: Vec<(i64, usize)> = tr.records.iter().map(|(f, _)| (f.t, f.k)).collect();
        assert_eq!(idx, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0)]);
        assert_eq!(tr.blended.iter().map(|b| b.0).collect::<Vec<_>>(), vec![1, 2]);
        sc.granularity = Granularity::Integer;
        let tr2 = simulate(&sc).unwrap();
        assert_eq!(tr2.records.len(), 3);
        assert_eq!(tr2.final_state(), tr.final_state());
    }

    #[test]
    fn identical_contractive_maps_converge_to_scaled_reference() {
        // f(x) = 0.5 x + 1 everywhere: the macro map is affine with fixed point 2 * 1.
        let g = DirectedGraph::generate_connected(6, 0.4, 2, true).unwrap();
        let sc = Scenario::new(
            g,
            Coupling::MetropolisHastings(0.5),
            Arc::new(AffineFamily::uniform(AffineMap::scalar(0.5, 1.0))),
            3,
            80,
        )
        .with_scalar_initial(&[10.0, -3.0, 4.0, 0.0, 8.0, 1.0]);
        let tr = simulate(&sc).unwrap();
        for v in tr.final_state().x.iter() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(tr.blended.last().unwrap().1[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn events_rebuild_epochs() {
        let g = DirectedGraph::cycle(5);
        let mut sc = Scenario::new(
            g,
            Coupling::MetropolisHastings(0.5),
            Arc::new(AffineFamily::uniform(AffineMap::scalar(0.5, 1.0))),
            3,
            6,
        );
        sc.events.push(ScheduledEvent {
            t: 2,
            event: GraphEvent::Leave { id: NodeId(3) },
            state: None,
        });
        sc.events.push(ScheduledEvent {
            t: 4,
            event: GraphEvent::join_neighbors(NodeId(9), &[NodeId(1), NodeId(2)]),
            state: Some(DVector::from_element(1, 7.0)),
        });
        let tr = simulate(&sc).unwrap();
        assert_eq!(tr.epochs.len(), 3);
        assert_eq!(tr.events_applied.len(), 2);
        assert_eq!(tr.state_at(2, 0).unwrap().len(), 4);
        let at4 = tr.state_at(4, 0).unwrap();
        assert_eq!(at4.ids.last(), Some(&NodeId(9)));
        assert_eq!(at4.x[(4, 0)], 7.0);

        let mut bad = sc.clone();
        bad.events = vec![ScheduledEvent {
            t: 1,
            event: GraphEvent::Leave { id: NodeId(3) },
            state: None,
        }];
        bad.graph = DirectedGraph::path(5);
        let err = simulate(&bad).unwrap_err();
        assert!(matches!(err, Error::AtTime { t: 1, .. }), "{err}");
    }

    #[test]
    fn csv_has_header_and_blended_rows() {
        let g = DirectedGraph::path(2);
        let sc = Scenario::new(
            g,
            Coupling::MetropolisHastings(0.5),
            Arc::new(AffineFamily::uniform(AffineMap::scalar(0.5, 1.0))),
            2,
            1,
        );
        let tr = simulate(&sc).unwrap();
        let csv = tr.to_csv(&TraceHeader {
            scenario_hash: "abc".into(),
            coupling: CouplingKind::MetropolisHastings,
            seed: 3,
        });
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# scenario_hash=abc K=2 coupling=metropolis_hastings seed=3");
        assert_eq!(lines[1], "t,k,node_id,x0");
        assert_eq!(lines[2], "0,0,1,0");
        assert!(lines.contains(&"1,0,s,1"));
        assert_eq!(tr.blended_csv(), "t,s0\n1,1\n");
    }
}
