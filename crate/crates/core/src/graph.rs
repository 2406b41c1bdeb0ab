//! Communication topologies.
//!
//! A [`DirectedGraph`] is an immutable value: a set of node ids and a set of
//! ordered edges `(j, i)` meaning "j sends to i". Undirected graphs are the
//! same type with a flag set and a symmetric edge set. Dense matrices built
//! from a graph index nodes in ascending id order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unique positive node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl From<u64> for NodeId {
    fn from(v: u64) -> Self {
        NodeId(v)
    }
}

/// Non-increasing list of node degrees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSequence(Vec<usize>);

impl DegreeSequence {
    pub fn new(mut degrees: Vec<usize>) -> Self {
        degrees.sort_unstable_by(|a, b| b.cmp(a));
        DegreeSequence(degrees)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Plug-and-play membership change, applied at integer boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphEvent {
    /// A new node with its incident edges. For undirected graphs each pair is
    /// inserted in both directions.
    Join { id: NodeId, edges: Vec<(NodeId, NodeId)> },
    Leave { id: NodeId },
}

impl GraphEvent {
    /// Join an undirected graph, connecting `id` to every listed neighbour.
    pub fn join_neighbors(id: NodeId, neighbors: &[NodeId]) -> Self {
        GraphEvent::Join {
            id,
            edges: neighbors.iter().map(|&n| (n, id)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    undirected: bool,
    nodes: BTreeSet<NodeId>,
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl DirectedGraph {
    /// Build a directed graph. Edge endpoints are added to the node set.
    pub fn directed(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        Self::build(false, nodes, edges)
    }

    /// Build an undirected graph; every pair is stored in both directions.
    pub fn undirected(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        Self::build(true, nodes, edges)
    }

    fn build(
        undirected: bool,
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let mut g = DirectedGraph {
            undirected,
            nodes: nodes.into_iter().collect(),
            edges: BTreeSet::new(),
        };
        for (j, i) in edges {
            g.insert_edge(j, i)?;
        }
        Ok(g)
    }

    fn insert_edge(&mut self, j: NodeId, i: NodeId) -> Result<()> {
        if j == i {
            return Err(Error::graph(format!("self-loop at node {j}")));
        }
        if j.0 == 0 || i.0 == 0 {
            return Err(Error::graph("node ids must be positive"));
        }
        self.nodes.insert(j);
        self.nodes.insert(i);
        self.edges.insert((j, i));
        if self.undirected {
            self.edges.insert((i, j));
        }
        Ok(())
    }

    /// Convenience constructors used throughout tests and examples.
    pub fn path(n: u64) -> Self {
        Self::undirected((1..=n).map(NodeId), (1..n).map(|i| (NodeId(i), NodeId(i + 1))))
            .expect("path graph is valid")
    }

    pub fn complete(n: u64) -> Self {
        let edges = (1..=n).flat_map(|i| ((i + 1)..=n).map(move |j| (NodeId(i), NodeId(j))));
        Self::undirected((1..=n).map(NodeId), edges).expect("complete graph is valid")
    }

    pub fn cycle(n: u64) -> Self {
        Self::undirected((1..=n).map(NodeId), (1..=n).map(|i| (NodeId(i), NodeId(i % n + 1))))
            .expect("cycle is valid")
    }

    /// Directed cycle 1 -> 2 -> ... -> n -> 1.
    pub fn directed_cycle(n: u64) -> Self {
        Self::directed((1..=n).map(NodeId), (1..=n).map(|i| (NodeId(i), NodeId(i % n + 1))))
            .expect("cycle is valid")
    }

    pub fn star(leaves: u64) -> Self {
        Self::undirected((1..=leaves + 1).map(NodeId), (2..=leaves + 1).map(|i| (NodeId(1), NodeId(i))))
            .expect("star is valid")
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in ascending order; this is the row order of every dense matrix.
    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.iter().copied().collect()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.contains(&id).then(|| self.nodes.range(..id).count())
    }

    pub fn in_neighbors(&self, i: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.iter().filter(move |e| e.1 == i).map(|e| e.0)
    }

    pub fn out_neighbors(&self, i: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.range((i, NodeId(0))..=(i, NodeId(u64::MAX))).map(|e| e.1)
    }

    pub fn in_degree(&self, i: NodeId) -> usize {
        self.in_neighbors(i).count()
    }

    pub fn out_degree(&self, i: NodeId) -> usize {
        self.out_neighbors(i).count()
    }

    /// In-degrees in node order.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, i) in &self.edges {
            *deg.get_mut(&i).expect("edge endpoint is a node") += 1;
        }
        deg.into_values().collect()
    }

    /// Out-degrees in node order.
    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(j, _) in &self.edges {
            *deg.get_mut(&j).expect("edge endpoint is a node") += 1;
        }
        deg.into_values().collect()
    }

    /// Binary adjacency `a[i][j] = 1` iff `(j, i)` is an edge.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let ids = self.ids();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(k, &n)| (n, k)).collect();
        let mut a = vec![vec![false; ids.len()]; ids.len()];
        for &(j, i) in &self.edges {
            a[index[&i]][index[&j]] = true;
        }
        a
    }

    fn reachable(&self, start: NodeId, forward: bool) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let next: Vec<NodeId> = if forward {
                self.out_neighbors(u).collect()
            } else {
                self.in_neighbors(u).collect()
            };
            for v in next {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Every node reaches every other node. An empty graph is not connected.
    pub fn is_strongly_connected(&self) -> bool {
        let Some(&first) = self.nodes.iter().next() else {
            return false;
        };
        self.reachable(first, true).len() == self.len() && self.reachable(first, false).len() == self.len()
    }

    /// Primitivity of the binary adjacency matrix, optionally with ones on the
    /// diagonal. Checks positivity of `A^m` with `m` the Wielandt bound
    /// `(N-1)^2 + 1`; a primitive matrix is positive from its exponent onward,
    /// and the exponent never exceeds that bound.
    pub fn is_primitive(&self, with_self_loops: bool) -> bool {
        let n = self.len();
        if n == 0 {
            return false;
        }
        let mut base = self.adjacency();
        if with_self_loops {
            for (k, row) in base.iter_mut().enumerate() {
                row[k] = true;
            }
        }
        let bound = (n - 1) * (n - 1) + 1;
        let mut power = base.clone();
        for _ in 1..bound {
            if all_positive(&power) {
                return true;
            }
            power = bool_matmul(&power, &base);
        }
        all_positive(&power)
    }

    pub fn degree_sequence(&self) -> Result<DegreeSequence> {
        if !self.undirected {
            return Err(Error::graph("degree sequence requires an undirected graph"));
        }
        Ok(DegreeSequence::new(self.in_degrees()))
    }

    /// Apply a membership event and return the new graph. The caller is
    /// responsible for re-validating connectivity.
    pub fn mutate(&self, event: &GraphEvent) -> Result<Self> {
        self.mutate_protected(event, &[])
    }

    /// Like [`mutate`](Self::mutate) but refuses to remove any node in `protected`.
    pub fn mutate_protected(&self, event: &GraphEvent, protected: &[NodeId]) -> Result<Self> {
        let mut g = self.clone();
        match event {
            GraphEvent::Join { id, edges } => {
                if g.nodes.contains(id) {
                    return Err(Error::graph(format!("node {id} already present")));
                }
                if id.0 == 0 {
                    return Err(Error::graph("node ids must be positive"));
                }
                g.nodes.insert(*id);
                for &(j, i) in edges {
                    if j != *id && i != *id {
                        return Err(Error::graph(format!("join edge ({j}, {i}) does not touch node {id}")));
                    }
                    let other = if j == *id { i } else { j };
                    if !self.nodes.contains(&other) {
                        return Err(Error::graph(format!("join edge references unknown node {other}")));
                    }
                    g.insert_edge(j, i)?;
                }
            }
            GraphEvent::Leave { id } => {
                if protected.contains(id) {
                    return Err(Error::ProtectedNode(*id));
                }
                if !g.nodes.remove(id) {
                    return Err(Error::graph(format!("node {id} is not in the graph")));
                }
                g.edges.retain(|&(j, i)| j != *id && i != *id);
            }
        }
        Ok(g)
    }

    /// Seeded random graph on ids `1..=n`, resampled until (strongly) connected.
    pub fn generate_connected(n: usize, edge_probability: f64, seed: u64, undirected: bool) -> Result<Self> {
        const MAX_ATTEMPTS: usize = 10_000;
        if n < 2 {
            return Err(Error::graph("generator needs n >= 2"));
        }
        if !(edge_probability > 0.0 && edge_probability <= 1.0) {
            return Err(Error::Parameter {
                name: "edge_probability",
                value: edge_probability,
                reason: "must lie in (0, 1]",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<NodeId> = (1..=n as u64).map(NodeId).collect();
        for _ in 0..MAX_ATTEMPTS {
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a == b || (undirected && b < a) {
                        continue;
                    }
                    if rng.random::<f64>() < edge_probability {
                        edges.push((ids[a], ids[b]));
                    }
                }
            }
            let g = Self::build(undirected, ids.iter().copied(), edges)?;
            if g.is_strongly_connected() {
                return Ok(g);
            }
        }
        Err(Error::RetryBudget {
            attempts: MAX_ATTEMPTS,
        })
    }

    /// Parse the edge-list text format: optional first line `undirected`,
    /// then one `j i` pair per line (edge j -> i). A line holding a single id
    /// declares an isolated node. Lines starting with `#` are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut undirected = None;
        let mut nodes = BTreeSet::new();
        let mut edges: Vec<(usize, NodeId, NodeId)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if undirected.is_none() {
                if line == "undirected" {
                    undirected = Some(true);
                    continue;
                }
                undirected = Some(false);
            } else if line == "undirected" {
                return Err(Error::Parse {
                    line: lineno,
                    message: "`undirected` header must be the first line".into(),
                });
            }
            let ids: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<NodeId> {
                match s.parse::<u64>() {
                    Ok(v) if v > 0 => Ok(NodeId(v)),
                    _ => Err(Error::Parse {
                        line: lineno,
                        message: format!("`{s}` is not a positive integer id"),
                    }),
                }
            };
            match ids.as_slice() {
                [single] => {
                    nodes.insert(parse(single)?);
                }
                [j, i] => edges.push((lineno, parse(j)?, parse(i)?)),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "expected `j i`".into(),
                    })
                }
            }
        }
        let undirected = undirected.unwrap_or(false);
        let mut g = DirectedGraph {
            undirected,
            nodes,
            edges: BTreeSet::new(),
        };
        for (lineno, j, i) in edges {
            if j == i {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("self-loop at node {j}"),
                });
            }
            if g.edges.contains(&(j, i)) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate edge {j} {i}"),
                });
            }
            g.insert_edge(j, i)?;
        }
        Ok(g)
    }

    /// Canonical text form: undirected edges once with `j < i`, ascending.
    pub fn serialize_edge_list(&self) -> String {
        let mut out = String::new();
        if self.undirected {
            out.push_str("undirected\n");
        }
        let mut touched = BTreeSet::new();
        for &(j, i) in &self.edges {
            if self.undirected && j > i {
                continue;
            }
            touched.insert(j);
            touched.insert(i);
            out.push_str(&format!("{j} {i}\n"));
        }
        for n in self.nodes.difference(&touched) {
            out.push_str(&format!("{n}\n"));
        }
        out
    }
}

fn all_positive(m: &[Vec<bool>]) -> bool {
    m.iter().all(|row| row.iter().all(|&b| b))
}

fn bool_matmul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut c = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    c[i][j] |= b[k][j];
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u64]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn strong_connectivity() {
        assert!(DirectedGraph::directed_cycle(3).is_strongly_connected());
        let chain = DirectedGraph::directed(ids(&[1, 2, 3]), [(NodeId(1), NodeId(2)), (NodeId(2), NodeId(3))]).unwrap();
        assert!(!chain.is_strongly_connected());
        assert!(DirectedGraph::path(3).is_strongly_connected());
    }

    #[test]
    fn primitivity() {
        assert!(DirectedGraph::directed_cycle(5).is_primitive(true));
        let two_cycle = DirectedGraph::directed_cycle(2);
        assert!(!two_cycle.is_primitive(false));
        assert!(two_cycle.is_primitive(true));
        let disconnected = DirectedGraph::undirected(ids(&[1, 2, 3, 4]), [(NodeId(1), NodeId(2)), (NodeId(3), NodeId(4))]).unwrap();
        assert!(!disconnected.is_primitive(true));
        // odd cycle undirected: aperiodic without self-loops
        assert!(DirectedGraph::cycle(3).is_primitive(false));
        assert!(!DirectedGraph::cycle(4).is_primitive(false));
    }

    #[test]
    fn degree_sequences() {
        assert_eq!(DirectedGraph::path(3).degree_sequence().unwrap().as_slice(), &[2, 1, 1]);
        assert_eq!(DirectedGraph::complete(4).degree_sequence().unwrap().as_slice(), &[3, 3, 3, 3]);
        assert_eq!(DirectedGraph::star(4).degree_sequence().unwrap().as_slice(), &[4, 1, 1, 1, 1]);
        assert!(DirectedGraph::directed_cycle(3).degree_sequence().is_err());
    }

    #[test]
    fn mutation_events() {
        let tri = DirectedGraph::cycle(3);
        let after = tri.mutate(&GraphEvent::Leave { id: NodeId(3) }).unwrap();
        assert_eq!(after, DirectedGraph::path(2));

        let joined = tri.mutate(&GraphEvent::join_neighbors(NodeId(4), &[NodeId(1)])).unwrap();
        assert_eq!(joined.len(), 4);
        assert!(joined.is_strongly_connected());
        assert!(joined.has_edge(NodeId(4), NodeId(1)) && joined.has_edge(NodeId(1), NodeId(4)));

        let split = DirectedGraph::path(3).mutate(&GraphEvent::Leave { id: NodeId(2) }).unwrap();
        assert!(!split.is_strongly_connected());

        assert_eq!(
            tri.mutate_protected(&GraphEvent::Leave { id: NodeId(1) }, &[NodeId(1)]),
            Err(Error::ProtectedNode(NodeId(1)))
        );
        assert!(tri.mutate(&GraphEvent::Leave { id: NodeId(9) }).is_err());
        assert!(tri.mutate(&GraphEvent::join_neighbors(NodeId(2), &[NodeId(1)])).is_err());
    }

    #[test]
    fn generator() {
        let g = DirectedGraph::generate_connected(2, 1.0, 0, true).unwrap();
        assert_eq!(g, DirectedGraph::path(2));
        assert_eq!(DirectedGraph::generate_connected(5, 1.0, 3, true).unwrap(), DirectedGraph::complete(5));
        let a = DirectedGraph::generate_connected(12, 0.3, 42, false).unwrap();
        let b = DirectedGraph::generate_connected(12, 0.3, 42, false).unwrap();
        assert_eq!(a, b);
        assert!(a.is_strongly_connected());
        assert!(DirectedGraph::generate_connected(1, 0.5, 0, true).is_err());
    }

    #[test]
    fn edge_list_format() {
        let g = DirectedGraph::parse_edge_list("1 2\n2 1").unwrap();
        assert_eq!(g, DirectedGraph::directed_cycle(2));
        assert!(!g.is_undirected());
        assert!(matches!(DirectedGraph::parse_edge_list("1 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(DirectedGraph::parse_edge_list("1 2\n1 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(DirectedGraph::parse_edge_list("1 x"), Err(Error::Parse { .. })));
        assert!(matches!(DirectedGraph::parse_edge_list("1 2 3"), Err(Error::Parse { .. })));

        let text = "# triangle\nundirected\n3 1\n1 2\n2 3\n";
        let g = DirectedGraph::parse_edge_list(text).unwrap();
        assert!(g.is_undirected());
        assert_eq!(g.serialize_edge_list(), "undirected\n1 2\n1 3\n2 3\n");
        assert_eq!(DirectedGraph::parse_edge_list(&g.serialize_edge_list()).unwrap(), g);
    }

    #[test]
    fn isolated_nodes_round_trip() {
        let g = DirectedGraph::path(3).mutate(&GraphEvent::Leave { id: NodeId(2) }).unwrap();
        let text = g.serialize_edge_list();
        assert_eq!(DirectedGraph::parse_edge_list(&text).unwrap(), g);
    }

    #[test]
    fn degrees_and_index() {
        let g = DirectedGraph::directed(ids(&[1, 2, 3]), [(NodeId(1), NodeId(2)), (NodeId(1), NodeId(3)), (NodeId(3), NodeId(1))]).unwrap();
        assert_eq!(g.out_degrees(), vec![2, 0, 1]);
        assert_eq!(g.in_degrees(), vec![1, 1, 1]);
        assert_eq!(g.index_of(NodeId(3)), Some(2));
        assert_eq!(g.index_of(NodeId(7)), None);
    }
}
