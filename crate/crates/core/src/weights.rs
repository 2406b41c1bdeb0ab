//! Coupling weight matrices.
//!
//! Every constructor returns a matrix whose positive pattern is exactly the
//! in-neighbourhood plus the diagonal, and whose spectral radius is one:
//!
//! * Metropolis–Hastings: doubly stochastic on undirected graphs.
//! * PageRank: `m I + (1 - m) A D_out^{-1}`, column stochastic.
//! * average: `theta I + (1 - theta) D^{-1} A`, row stochastic.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, Error, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::linalg;

/// Tolerance for stochasticity and spectral-radius checks.
pub const WEIGHT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    MetropolisHastings,
    Pagerank,
    Average,
    Custom,
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingKind::MetropolisHastings => "metropolis_hastings",
            CouplingKind::Pagerank => "pagerank",
            CouplingKind::Average => "average",
            CouplingKind::Custom => "custom",
        })
    }
}

impl FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis_hastings" => Ok(CouplingKind::MetropolisHastings),
            "pagerank" => Ok(CouplingKind::Pagerank),
            "average" => Ok(CouplingKind::Average),
            "custom" => Ok(CouplingKind::Custom),
            other => Err(Error::Config(format!("unknown coupling kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
    kind: CouplingKind,
    parameter: Option<f64>,
    ids: Vec<NodeId>,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    /// The governing scalar (mu, m or theta); `None` for custom matrices.
    pub fn parameter(&self) -> Option<f64> {
        self.parameter
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// User-supplied matrix. Nothing is checked here; run [`validate`].
    pub fn custom(matrix: DMatrix<f64>, ids: Vec<NodeId>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != ids.len() {
            return Err(Error::Dimension {
                expected: ids.len(),
                got: matrix.nrows(),
            });
        }
        Ok(WeightMatrix {
            matrix,
            kind: CouplingKind::Custom,
            parameter: None,
            ids,
        })
    }

    /// Same matrix scaled by `c`; used to build counterexamples.
    pub fn scaled(&self, c: f64) -> Self {
        WeightMatrix {
            matrix: &self.matrix * c,
            kind: CouplingKind::Custom,
            parameter: None,
            ids: self.ids.clone(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.column_iter().map(|c| c.sum()).collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.matrix)
    }

    /// Dense CSV: a `# kind=.. parameter=..` line, an `id` header row with the
    /// column node ids, then one row per node. Floats use shortest round-trip
    /// formatting so import is exact.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# kind={} parameter={}\n",
            self.kind,
            self.parameter.map_or_else(|| "none".to_string(), |p| p.to_string())
        );
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("id".to_string()).chain(self.ids.iter().map(|i| i.to_string())).collect();
        w.write_record(&header).expect("in-memory write");
        for (r, id) in self.ids.iter().enumerate() {
            let row: Vec<String> = std::iter::once(id.to_string())
                .chain(self.matrix.row(r).iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&row).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').ok_or_else(|| Error::Config("empty weight csv".into()))?;
        let meta = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Config("weight csv must start with `# kind=..`".into()))?;
        let mut kind = None;
        let mut parameter = None;
        for field in meta.split_whitespace() {
            match field.split_once('=') {
                Some(("kind", v)) => kind = Some(v.parse::<CouplingKind>()?),
                Some(("parameter", "none")) => parameter = None,
                Some(("parameter", v)) => {
                    parameter = Some(v.parse::<f64>().map_err(|e| Error::Config(format!("parameter: {e}")))?)
                }
                _ => return Err(Error::Config(format!("unexpected metadata `{field}`"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Config("missing kind".into()))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let csv_err = |e: csv::Error| Error::Config(format!("weight csv: {e}"));
        let header = reader.headers().map_err(csv_err)?.clone();
        let parse_id = |s: &str| -> Result<NodeId> {
            s.parse::<u64>()
                .map(NodeId)
                .map_err(|_| Error::Config(format!("bad node id `{s}`")))
        };
        let ids: Vec<NodeId> = header.iter().skip(1).map(parse_id).collect::<Result<_>>()?;
        let n = ids.len();
        let mut data = Vec::with_capacity(n * n);
        for (r, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != n + 1 || r >= n || parse_id(&rec[0])? != ids[r] {
                return Err(Error::Config(format!("weight csv row {} malformed", r + 1)));
            }
            for v in rec.iter().skip(1) {
                data.push(v.parse::<f64>().map_err(|e| Error::Config(format!("weight value `{v}`: {e}")))?);
            }
        }
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(WeightMatrix {
            matrix: DMatrix::from_row_slice(n, n, &data),
            kind,
            parameter,
            ids,
        })
    }
}

fn require_undirected_connected(g: &DirectedGraph) -> Result<()> {
    if !g.is_undirected() {
        return Err(Error::graph("Metropolis-Hastings weights need an undirected graph"));
    }
    if !g.is_strongly_connected() {
        return Err(Error::assumption("Assumption 2 violated: graph is not connected"));
    }
    Ok(())
}

/// `w_ij = (1 - mu) / max(d_i, d_j)` on edges; the diagonal fills each row to one.
pub fn metropolis_hastings(g: &DirectedGraph, mu: f64) -> Result<WeightMatrix> {
    check_open_unit("mu", mu)?;
    require_undirected_connected(g)?;
    let ids = g.ids();
    let deg = g.in_degrees();
    let n = ids.len();
    let mut w = DMatrix::zeros(n, n);
    let adj = g.adjacency();
    for i in 0..n {
        for j in 0..n {
            if adj[i][j] {
                w[(i, j)] = (1.0 - mu) / deg[i].max(deg[j]) as f64;
            }
        }
        let off: f64 = w.row(i).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(WeightMatrix {
        matrix: w,
        kind: CouplingKind::MetropolisHastings,
        parameter: Some(mu),
        ids,
    })
}

/// PageRank power-method weights: `w_ii = m`, `w_ij = (1 - m) a_ij / d_j^out`.
pub fn pagerank_coupling(g: &DirectedGraph, m: f64) -> Result<WeightMatrix> {
    check_open_unit("m", m)?;
    let ids = g.ids();
    let out = g.out_degrees();
    if let Some(k) = out.iter().position(|&d| d == 0) {
        return Err(Error::assumption(format!("node {} has zero out-degree", ids[k])));
    }
    if !g.is_strongly_connected() {
        return Err(Error::assumption("Assumption 2 violated: graph is not strongly connected"));
    }
    let n = ids.len();
    let adj = g.adjacency();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = if i == j {
                m
            } else if adj[i][j] {
                (1.0 - m) / out[j] as f64
            } else {
                0.0
            };
        }
    }
    Ok(WeightMatrix {
        matrix: w,
        kind: CouplingKind::Pagerank,
        parameter: Some(m),
        ids,
    })
}

/// Average-consensus weights: `w_ii = theta`, `w_ij = (1 - theta) a_ij / d_i`.
pub fn average_coupling(g: &DirectedGraph, theta: f64) -> Result<WeightMatrix> {
    check_open_unit("theta", theta)?;
    let ids = g.ids();
    let deg = g.in_degrees();
    if let Some(k) = deg.iter().position(|&d| d == 0) {
        return Err(Error::assumption(format!("node {} has zero in-degree", ids[k])));
    }
    if !g.is_strongly_connected() {
        return Err(Error::assumption("Assumption 2 violated: graph is not strongly connected"));
    }
    let n = ids.len();
    let adj = g.adjacency();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = if i == j {
                theta
            } else if adj[i][j] {
                (1.0 - theta) / deg[i] as f64
            } else {
                0.0
            };
        }
    }
    Ok(WeightMatrix {
        matrix: w,
        kind: CouplingKind::Average,
        parameter: Some(theta),
        ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum WeightViolation {
    /// Entry sign disagrees with the in-neighbourhood-plus-self pattern.
    Sparsity { row: NodeId, col: NodeId, value: f64 },
    NonPositiveDiagonal { node: NodeId, value: f64 },
    Negative { row: NodeId, col: NodeId, value: f64 },
    SpectralRadius { value: f64 },
    NodeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub spectral_radius: f64,
    pub violations: Vec<WeightViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the sparsity/positivity pattern against `g` and `|rho(W) - 1| <= tol`.
pub fn validate(w: &WeightMatrix, g: &DirectedGraph, tol: f64) -> ValidationReport {
    let ids = g.ids();
    let mut violations = Vec::new();
    if ids != w.ids {
        violations.push(WeightViolation::NodeSet);
        return ValidationReport {
            spectral_radius: w.spectral_radius(),
            violations,
        };
    }
    let adj = g.adjacency();
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            let v = w.matrix[(i, j)];
            if v < 0.0 {
                violations.push(WeightViolation::Negative {
                    row: ids[i],
                    col: ids[j],
                    value: v,
                });
            }
            if i == j {
                if v <= 0.0 {
                    violations.push(WeightViolation::NonPositiveDiagonal { node: ids[i], value: v });
                }
            } else if adj[i][j] != (v > 0.0) {
                violations.push(WeightViolation::Sparsity {
                    row: ids[i],
                    col: ids[j],
                    value: v,
                });
            }
        }
    }
    let rho = w.spectral_radius();
    if (rho - 1.0).abs() > tol {
        violations.push(WeightViolation::SpectralRadius { value: rho });
    }
    ValidationReport {
        spectral_radius: rho,
        violations,
    }
}
