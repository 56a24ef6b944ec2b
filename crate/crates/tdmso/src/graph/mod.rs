//! Simple undirected graphs with positive integer identifiers, optional
//! labels, and signed weights on vertices and edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod decomp;
mod parse;
mod treedepth;

pub use decomp::{
    canonical_decomposition, check_elimination_forest, EliminationForest, TreeDecomposition,
};
pub use parse::{parse_graph, write_graph, GraphFileError};
pub use treedepth::{exact_treedepth, TreedepthResult, TD_STATE_BUDGET};

/// Vertex identifier. Always positive; the total order on identifiers is
/// what orders terminal lists and bag contents everywhere downstream.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Normalized edge key: endpoints in ascending order.
pub fn ekey(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node identifiers must be positive")]
    ZeroNodeId,
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("edge {0}-{1} already present")]
    DuplicateEdge(NodeId, NodeId),
    #[error("self-loop at {0}")]
    SelfLoop(NodeId),
    #[error("unknown node {0}")]
    MissingNode(NodeId),
    #[error("weight {weight} on {element} exceeds bound {bound} (|w| <= max(n,2)^{exponent})")]
    WeightOutOfRange {
        element: String,
        weight: i64,
        bound: i64,
        exponent: u32,
    },
    #[error("instance too large for exact treedepth ({0} states explored)")]
    SizeLimit(usize),
    #[error("invalid elimination forest: {0}")]
    InvalidForest(String),
}

/// Undirected simple graph. Vertices and edges may carry string labels and
/// signed integer weights; missing weights default to 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Graph {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    node_weights: BTreeMap<NodeId, i64>,
    edge_weights: BTreeMap<(NodeId, NodeId), i64>,
    node_labels: BTreeMap<NodeId, BTreeSet<String>>,
    edge_labels: BTreeMap<(NodeId, NodeId), BTreeSet<String>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from bare node ids and edges, unit weights, no labels.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = u32>,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, GraphError> {
        let mut g = Graph::new();
        for v in nodes {
            g.add_node(NodeId(v))?;
        }
        for (u, v) in edges {
            g.add_edge(NodeId(u), NodeId(v))?;
        }
        Ok(g)
    }

    pub fn add_node(&mut self, v: NodeId) -> Result<(), GraphError> {
        if v.0 == 0 {
            return Err(GraphError::ZeroNodeId);
        }
        if self.adj.contains_key(&v) {
            return Err(GraphError::DuplicateNode(v));
        }
        self.adj.insert(v, BTreeSet::new());
        Ok(())
    }

    pub fn add_edge(&mut self, u: NodeId, v: NodeId) -> Result<(), GraphError> {
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        if !self.adj.contains_key(&u) {
            return Err(GraphError::MissingNode(u));
        }
        if !self.adj.contains_key(&v) {
            return Err(GraphError::MissingNode(v));
        }
        if self.has_edge(u, v) {
            return Err(GraphError::DuplicateEdge(u, v));
        }
        self.adj.get_mut(&u).unwrap().insert(v);
        self.adj.get_mut(&v).unwrap().insert(u);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn m(&self) -> usize {
        self.adj.values().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn has_node(&self, v: NodeId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj.get(&u).is_some_and(|s| s.contains(&v))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    /// Edges with endpoints in ascending order, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj
            .iter()
            .flat_map(|(&u, nbrs)| nbrs.iter().copied().filter(move |&v| u < v).map(move |v| (u, v)))
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&v).into_iter().flatten().copied()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj.get(&v).map_or(0, |s| s.len())
    }

    pub fn node_weight(&self, v: NodeId) -> i64 {
        self.node_weights.get(&v).copied().unwrap_or(1)
    }

    pub fn edge_weight(&self, u: NodeId, v: NodeId) -> i64 {
        self.edge_weights.get(&ekey(u, v)).copied().unwrap_or(1)
    }

    pub fn set_node_weight(&mut self, v: NodeId, w: i64) -> Result<(), GraphError> {
        if !self.has_node(v) {
            return Err(GraphError::MissingNode(v));
        }
        self.node_weights.insert(v, w);
        Ok(())
    }

    pub fn set_edge_weight(&mut self, u: NodeId, v: NodeId, w: i64) -> Result<(), GraphError> {
        if !self.has_edge(u, v) {
            return Err(GraphError::MissingNode(u));
        }
        self.edge_weights.insert(ekey(u, v), w);
        Ok(())
    }

    pub fn node_labels(&self, v: NodeId) -> impl Iterator<Item = &str> + '_ {
        self.node_labels.get(&v).into_iter().flatten().map(|s| s.as_str())
    }

    pub fn edge_labels(&self, u: NodeId, v: NodeId) -> impl Iterator<Item = &str> + '_ {
        self.edge_labels
            .get(&ekey(u, v))
            .into_iter()
            .flatten()
            .map(|s| s.as_str())
    }

    pub fn node_has_label(&self, v: NodeId, label: &str) -> bool {
        self.node_labels.get(&v).is_some_and(|s| s.contains(label))
    }

    pub fn edge_has_label(&self, u: NodeId, v: NodeId, label: &str) -> bool {
        self.edge_labels.get(&ekey(u, v)).is_some_and(|s| s.contains(label))
    }

    pub fn add_node_label(&mut self, v: NodeId, label: &str) -> Result<(), GraphError> {
        if !self.has_node(v) {
            return Err(GraphError::MissingNode(v));
        }
        self.node_labels.entry(v).or_default().insert(label.to_string());
        Ok(())
    }

    pub fn add_edge_label(&mut self, u: NodeId, v: NodeId, label: &str) -> Result<(), GraphError> {
        if !self.has_edge(u, v) {
            return Err(GraphError::MissingNode(u));
        }
        self.edge_labels.entry(ekey(u, v)).or_default().insert(label.to_string());
        Ok(())
    }

    pub fn remove_node_label(&mut self, v: NodeId, label: &str) {
        if let Some(s) = self.node_labels.get_mut(&v) {
            s.remove(label);
        }
    }

    pub fn remove_edge_label(&mut self, u: NodeId, v: NodeId, label: &str) {
        if let Some(s) = self.edge_labels.get_mut(&ekey(u, v)) {
            s.remove(label);
        }
    }

    /// Checks every weight against |w| <= max(n,2)^exponent so that weights
    /// stay encodable in O(log n) bits.
    pub fn validate_weights(&self, exponent: u32) -> Result<(), GraphError> {
        let base = self.n().max(2) as i64;
        let bound = base.saturating_pow(exponent);
        for (&v, &w) in &self.node_weights {
            if w.abs() > bound {
                return Err(GraphError::WeightOutOfRange {
                    element: format!("node {v}"),
                    weight: w,
                    bound,
                    exponent,
                });
            }
        }
        for (&(u, v), &w) in &self.edge_weights {
            if w.abs() > bound {
                return Err(GraphError::WeightOutOfRange {
                    element: format!("edge {u}-{v}"),
                    weight: w,
                    bound,
                    exponent,
                });
            }
        }
        Ok(())
    }

    /// Subgraph induced by `keep`; ids, weights, and labels are preserved.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> Graph {
        let mut g = Graph::new();
        for &v in keep {
            if !self.has_node(v) {
                continue;
            }
            g.adj.insert(v, BTreeSet::new());
            if let Some(&w) = self.node_weights.get(&v) {
                g.node_weights.insert(v, w);
            }
            if let Some(ls) = self.node_labels.get(&v) {
                g.node_labels.insert(v, ls.clone());
            }
        }
        for (u, v) in self.edges() {
            if g.has_node(u) && g.has_node(v) {
                g.adj.get_mut(&u).unwrap().insert(v);
                g.adj.get_mut(&v).unwrap().insert(u);
                if let Some(&w) = self.edge_weights.get(&(u, v)) {
                    g.edge_weights.insert((u, v), w);
                }
                if let Some(ls) = self.edge_labels.get(&(u, v)) {
                    g.edge_labels.insert((u, v), ls.clone());
                }
            }
        }
        g
    }

    pub fn is_connected(&self) -> bool {
        self.n() <= 1 || connected_components(self, None).len() == 1
    }
}

/// Connected components of `g`, or of the subgraph induced by `restrict`.
/// Components are returned sorted by their minimum element.
pub fn connected_components(g: &Graph, restrict: Option<&BTreeSet<NodeId>>) -> Vec<BTreeSet<NodeId>> {
    let in_scope = |v: NodeId| restrict.is_none_or(|r| r.contains(&v));
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for start in g.nodes() {
        if !in_scope(start) || seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(u) = queue.pop_front() {
            comp.insert(u);
            for w in g.neighbors(u) {
                if in_scope(w) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        out.push(comp);
    }
    out
}
