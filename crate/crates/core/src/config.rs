//! Scenario files: a TOML document describing graph, coupling, dynamics,
//! initial states and membership events.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::DEFAULT_TAIL_FRACTION;
use crate::apps::{Arithmetic, DegSeq, NetSize, PageRank};
use crate::error::{check_open_unit, Error, Result};
use crate::graph::{DirectedGraph, GraphEvent, NodeId};
use crate::sim::{AffineFamily, AffineMap, Coupling, DynamicsFamily, Granularity, Scenario, ScheduledEvent};
use crate::weights::{CouplingKind, WeightMatrix};

pub const DEFAULT_K_MAX: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// `K`, the number of sub-steps per integer round.
    pub steps_per_round: usize,
    pub horizon: i64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    /// Target error for reports and `K^min` searches.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub record: RecordMode,
    pub graph: GraphSpec,
    pub coupling: CouplingSpec,
    pub app: AppSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_tail() -> f64 {
    DEFAULT_TAIL_FRACTION
}

fn default_eps() -> f64 {
    0.1
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    #[default]
    Fraction,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum GraphSpec {
    /// Edge-list file, relative to the config file.
    File { path: PathBuf },
    /// Connected Erdős–Rényi graph seeded by the scenario seed.
    Random {
        nodes: usize,
        edge_probability: f64,
        #[serde(default = "yes")]
        undirected: bool,
    },
    Path { nodes: u64 },
    Cycle { nodes: u64 },
    DirectedCycle { nodes: u64 },
    Complete { nodes: u64 },
    Star { leaves: u64 },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub kind: CouplingKind,
    /// `mu`, `m` or `theta`.
    #[serde(default)]
    pub parameter: Option<f64>,
    /// Weight-matrix CSV for the custom kind, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum AppSpec {
    Netsize {
        #[serde(default)]
        anchor: Option<u64>,
    },
    Pagerank {
        nu: f64,
        #[serde(default)]
        n: Option<usize>,
    },
    Degseq {
        #[serde(default)]
        arithmetic: Arithmetic,
        /// Node id to encoding id; `node_id + 1` when absent.
        #[serde(default)]
        ids: BTreeMap<String, u32>,
    },
    /// Affine maps `f_i(x) = A x + b`, with optional per-node overrides.
    Custom {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default)]
        nodes: BTreeMap<String, AffineSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// State of every node not listed in `values`; zero when absent.
    #[serde(default)]
    pub default: Option<Vec<f64>>,
    /// Draw unlisted states uniformly from this box (seeded).
    #[serde(default, rename = "box")]
    pub bounds: Option<BoxSpec>,
    #[serde(default)]
    pub values: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    /// Largest Euclidean norm of a point in the box.
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub t: i64,
    #[serde(default)]
    pub leave: Option<u64>,
    #[serde(default)]
    pub join: Option<u64>,
    /// Neighbours of a joining node (undirected graphs).
    #[serde(default)]
    pub neighbors: Vec<u64>,
    /// Directed edges `[from, to]` of a joining node.
    #[serde(default)]
    pub edges: Vec<[u64; 2]>,
    #[serde(default)]
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Application selected by a scenario, with everything needed for decoding.
#[derive(Debug, Clone)]
pub enum App {
    NetSize(NetSize),
    PageRank(PageRank),
    DegSeq(DegSeq),
    Custom(AffineFamily),
}

impl App {
    pub fn family(&self) -> Arc<dyn DynamicsFamily> {
        match self {
            App::NetSize(a) => Arc::new(a.clone()),
            App::PageRank(a) => Arc::new(*a),
            App::DegSeq(a) => Arc::new(a.clone()),
            App::Custom(a) => Arc::new(a.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            App::NetSize(_) => "netsize",
            App::PageRank(_) => "pagerank",
            App::DegSeq(_) => "degseq",
            App::Custom(_) => "custom",
        }
    }
}

/// A config resolved against the file system and seed.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub app: App,
    pub coupling_parameter: Option<f64>,
    /// Hex SHA-256 of the effective config and graph.
    pub hash: String,
    /// Radius of the declared initial set: the box when given, else the
    /// largest initial state.
    pub initial_radius: f64,
}

fn parse_id(key: &str) -> Result<NodeId> {
    key.trim()
        .parse::<u64>()
        .map(NodeId)
        .map_err(|_| Error::Config(format!("`{key}` is not a node id")))
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("`{field}` must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Range checks that do not need the graph.
    pub fn check(&self) -> Result<()> {
        if self.steps_per_round < 1 {
            return Err(Error::Config("steps_per_round (K) must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config("tail_fraction must lie in (0, 1]".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.coupling.kind != CouplingKind::Custom {
            let p = self
                .coupling
                .parameter
                .ok_or_else(|| Error::Config(format!("coupling `{}` needs a parameter", self.coupling.kind)))?;
            let name = match self.coupling.kind {
                CouplingKind::MetropolisHastings => "mu",
                CouplingKind::Pagerank => "m",
                _ => "theta",
            };
            check_open_unit(name, p)?;
        } else if self.coupling.file.is_none() {
            return Err(Error::Config("custom coupling needs `file`".into()));
        }
        if let AppSpec::Pagerank { nu, .. } = self.app {
            check_open_unit("nu", nu)?;
        }
        if self.events.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(Error::Config("events must be sorted by time".into()));
        }
        for e in &self.events {
            if e.join.is_some() == e.leave.is_some() {
                return Err(Error::Config(format!("event at t = {} needs exactly one of `join`, `leave`", e.t)));
            }
            if e.t < 1 || e.t >= self.horizon {
                return Err(Error::Config(format!("event at t = {} outside [1, horizon)", e.t)));
            }
        }
        if let Some(b) = &self.initial.bounds {
            if b.lo.len() != b.hi.len() || b.lo.iter().zip(&b.hi).any(|(l, h)| !(l <= h)) {
                return Err(Error::Config("initial box needs lo <= hi componentwise".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml_str(&text)?, base))
    }

    fn build_graph(&self, base: &Path) -> Result<DirectedGraph> {
        match &self.graph {
            GraphSpec::File { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| Error::Io(format!("{}: {e}", full.display())))?;
                DirectedGraph::parse_edge_list(&text)
            }
            GraphSpec::Random {
                nodes,
                edge_probability,
                undirected,
            } => DirectedGraph::generate_connected(*nodes, *edge_probability, self.seed, *undirected),
            GraphSpec::Path { nodes } => Ok(DirectedGraph::path(*nodes)),
            GraphSpec::Cycle { nodes } => Ok(DirectedGraph::cycle(*nodes)),
            GraphSpec::DirectedCycle { nodes } => Ok(DirectedGraph::directed_cycle(*nodes)),
            GraphSpec::Complete { nodes } => Ok(DirectedGraph::complete(*nodes)),
            GraphSpec::Star { leaves } => Ok(DirectedGraph::star(*leaves)),
        }
    }

    fn build_app(&self, g: &DirectedGraph) -> Result<App> {
        Ok(match &self.app {
            AppSpec::Netsize { anchor } => App::NetSize(NetSize::new(g, anchor.map(NodeId))?),
            AppSpec::Pagerank { nu, n } => App::PageRank(PageRank::new(*nu, *n)?),
            AppSpec::Degseq { arithmetic, ids } => {
                let ids = ids
                    .iter()
                    .map(|(k, v)| Ok((parse_id(k)?, *v)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                App::DegSeq(DegSeq::new(ids, *arithmetic))
            }
            AppSpec::Custom { a, b, nodes } => {
                let default = AffineMap {
                    a: matrix(a, "app.a")?,
                    b: DVector::from_vec(b.clone()),
                };
                let mut per_node = BTreeMap::new();
                for (k, spec) in nodes {
                    per_node.insert(
                        parse_id(k)?,
                        AffineMap {
                            a: matrix(&spec.a, "app.nodes.a")?,
                            b: DVector::from_vec(spec.b.clone()),
                        },
                    );
                }
                App::Custom(AffineFamily { default, per_node })
            }
        })
    }

    /// Resolve graph files, generators and random initial states.
    pub fn build(&self, base: &Path, seed_override: Option<u64>) -> Result<BuiltScenario> {
        let mut cfg = self.clone();
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        let graph = cfg.build_graph(base)?;
        let coupling = match cfg.coupling.kind {
            CouplingKind::MetropolisHastings => Coupling::MetropolisHastings(cfg.coupling.parameter.unwrap_or_default()),
            CouplingKind::Pagerank => Coupling::Pagerank(cfg.coupling.parameter.unwrap_or_default()),
            CouplingKind::Average => Coupling::Average(cfg.coupling.parameter.unwrap_or_default()),
            CouplingKind::Custom => {
                let file = base.join(cfg.coupling.file.as_ref().expect("checked"));
                let text = std::fs::read_to_string(&file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
                Coupling::Custom(WeightMatrix::from_csv(&text)?)
            }
        };
        let app = cfg.build_app(&graph)?;
        let family = app.family();
        let dim = family.dim();

        let mut initial = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        for id in graph.ids() {
            let v = if let Some(v) = cfg.initial.values.get(&id.to_string()) {
                v.clone()
            } else if let Some(b) = &cfg.initial.bounds {
                b.lo.iter().zip(&b.hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
            } else if let Some(d) = &cfg.initial.default {
                d.clone()
            } else {
                vec![0.0; dim]
            };
            if v.len() != dim {
                return Err(Error::Config(format!("initial state of node {id} has length {}, expected {dim}", v.len())));
            }
            initial.insert(id, DVector::from_vec(v));
        }
        for k in cfg.initial.values.keys() {
            if !graph.contains(parse_id(k)?) {
                return Err(Error::Config(format!("initial value for unknown node {k}")));
            }
        }
        let initial_radius = cfg
            .initial
            .bounds
            .as_ref()
            .map_or_else(|| initial.values().map(|v| v.norm()).fold(0.0, f64::max), BoxSpec::radius);

        let mut events = Vec::new();
        for e in &cfg.events {
            let event = if let Some(id) = e.leave {
                GraphEvent::Leave { id: NodeId(id) }
            } else {
                let id = NodeId(e.join.expect("checked"));
                if e.edges.is_empty() {
                    let nb: Vec<NodeId> = e.neighbors.iter().copied().map(NodeId).collect();
                    GraphEvent::join_neighbors(id, &nb)
                } else {
                    GraphEvent::Join {
                        id,
                        edges: e.edges.iter().map(|[a, b]| (NodeId(*a), NodeId(*b))).collect(),
                    }
                }
            };
            events.push(ScheduledEvent {
                t: e.t,
                event,
                state: e.state.clone().map(DVector::from_vec),
            });
        }

        let scenario = Scenario {
            graph: graph.clone(),
            coupling,
            family,
            steps_per_round: cfg.steps_per_round,
            horizon: cfg.horizon,
            initial,
            events,
            granularity: match cfg.record {
                RecordMode::Fraction => Granularity::Fraction,
                RecordMode::Integer => Granularity::Integer,
            },
            perron_scale: 1.0,
        };

        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(&cfg).expect("config serializes").as_bytes());
        hasher.update(graph.serialize_edge_list().as_bytes());
        let hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();

        Ok(BuiltScenario {
            coupling_parameter: cfg.coupling.parameter,
            config: cfg,
            scenario,
            app,
            hash,
            initial_radius,
        })
    }
}
