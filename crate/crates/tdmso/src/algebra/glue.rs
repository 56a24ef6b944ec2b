//! Terminal graphs and gluing.
//!
//! A w-terminal graph is a graph with an ordered list of at most w
//! distinguished vertices (ordered ascending by id). Two terminal graphs
//! glue along a matrix: each row of the matrix names one terminal of the
//! result and says which terminal of each operand it comes from (0 = none).
//! A terminal named by both columns is identified across the operands; a
//! terminal appearing in no row is dropped and becomes permanently
//! interior.
//!
//! Gluing here is concrete, not up-to-isomorphism: identified terminals
//! must already carry the same vertex id, the operands may only overlap in
//! identified terminals, and the glued graph is the plain union. This keeps
//! vertex ids stable through a whole decomposition, which the distributed
//! protocols rely on.

use std::collections::BTreeSet;

use crate::graph::{ekey, Graph, NodeId};
use crate::mso::{Assignment, MsoFormula, Value};

use super::AlgebraError;

/// Hard ceiling on terminals per graph, sized so pair masks fit in `u128`.
pub const MAX_TERMINALS: usize = 16;

/// A graph with an ordered terminal list and (optionally) values for the
/// free set variables of the predicate under study, restricted to this
/// graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WTerminalGraph {
    pub graph: Graph,
    terminals: Vec<NodeId>,
    pub assignment: Option<Assignment>,
}

impl WTerminalGraph {
    /// Wraps `graph` with the given terminals (sorted ascending; duplicates
    /// rejected). Every terminal must be a vertex.
    pub fn new(
        graph: Graph,
        terminals: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, AlgebraError> {
        let mut terminals: Vec<NodeId> = terminals.into_iter().collect();
        terminals.sort();
        let before = terminals.len();
        terminals.dedup();
        if terminals.len() != before {
            return Err(AlgebraError::BadTerminals("duplicate terminal".into()));
        }
        if terminals.is_empty() {
            return Err(AlgebraError::BadTerminals("at least one terminal required".into()));
        }
        if terminals.len() > MAX_TERMINALS {
            return Err(AlgebraError::BadTerminals(format!(
                "{} terminals exceeds the supported maximum {MAX_TERMINALS}",
                terminals.len()
            )));
        }
        for &t in &terminals {
            if !graph.has_node(t) {
                return Err(AlgebraError::BadTerminals(format!("terminal {t} is not a vertex")));
            }
        }
        Ok(Self { graph, terminals, assignment: None })
    }

    /// A base graph: every vertex is a terminal.
    pub fn base(graph: Graph) -> Result<Self, AlgebraError> {
        let terminals: Vec<NodeId> = graph.nodes().collect();
        Self::new(graph, terminals)
    }

    pub fn with_assignment(mut self, a: Assignment) -> Self {
        self.assignment = Some(a);
        self
    }

    /// Terminals, ascending by id.
    pub fn terminals(&self) -> &[NodeId] {
        &self.terminals
    }

    /// Number of terminals (written τ).
    pub fn tau(&self) -> usize {
        self.terminals.len()
    }

    /// Rank (0-based position) of a terminal, if it is one.
    pub fn terminal_rank(&self, v: NodeId) -> Option<usize> {
        self.terminals.binary_search(&v).ok()
    }

    pub fn is_base(&self) -> bool {
        self.graph.n() == self.terminals.len()
    }
}

/// Gluing recipe: row r says where the r-th terminal of the result comes
/// from — entry 1..=τ names a terminal rank (1-based) of the respective
/// operand, 0 means "not from this operand". At least one entry per row is
/// nonzero and no rank repeats within a column.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GlueMatrix {
    rows: Vec<(u8, u8)>,
}

impl GlueMatrix {
    pub fn new(rows: Vec<(u8, u8)>) -> Result<Self, AlgebraError> {
        if rows.len() > MAX_TERMINALS {
            return Err(AlgebraError::BadMatrix(format!(
                "{} rows exceeds the supported maximum {MAX_TERMINALS}",
                rows.len()
            )));
        }
        if rows.is_empty() {
            return Err(AlgebraError::BadMatrix("at least one row required".into()));
        }
        let mut seen1 = BTreeSet::new();
        let mut seen2 = BTreeSet::new();
        for &(a, b) in &rows {
            if a == 0 && b == 0 {
                return Err(AlgebraError::BadMatrix("all-zero row".into()));
            }
            if a > 0 && !seen1.insert(a) {
                return Err(AlgebraError::BadMatrix(format!("rank {a} repeats in column 1")));
            }
            if b > 0 && !seen2.insert(b) {
                return Err(AlgebraError::BadMatrix(format!("rank {b} repeats in column 2")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(u8, u8)] {
        &self.rows
    }

    pub fn result_tau(&self) -> usize {
        self.rows.len()
    }

    /// Checks column entries against operand terminal counts.
    pub fn check_taus(&self, tau1: usize, tau2: usize) -> Result<(), AlgebraError> {
        for &(a, b) in &self.rows {
            if a as usize > tau1 || b as usize > tau2 {
                return Err(AlgebraError::BadMatrix(format!(
                    "entry ({a},{b}) out of range for operands with {tau1} and {tau2} terminals"
                )));
            }
        }
        Ok(())
    }

    /// For each operand, the map rank-of-operand → rank-of-result (None for
    /// dropped terminals).
    pub fn kept_maps(&self, tau1: usize, tau2: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let mut keep1 = vec![None; tau1];
        let mut keep2 = vec![None; tau2];
        for (r, &(a, b)) in self.rows.iter().enumerate() {
            if a > 0 {
                keep1[a as usize - 1] = Some(r);
            }
            if b > 0 {
                keep2[b as usize - 1] = Some(r);
            }
        }
        (keep1, keep2)
    }
}

/// The matrix that glues a child subtree (terminals `child_bag`) onto the
/// accumulated parent graph (terminals `parent_bag`): result terminals are
/// exactly `parent_bag`, shared ids are identified, child-only terminals
/// are dropped. Both bags must be ascending.
pub fn glue_matrix_for(child_bag: &[NodeId], parent_bag: &[NodeId]) -> GlueMatrix {
    let rows = parent_bag
        .iter()
        .enumerate()
        .map(|(r, v)| {
            let child_rank = child_bag
                .binary_search(v)
                .map(|i| (i + 1) as u8)
                .unwrap_or(0);
            (child_rank, (r + 1) as u8)
        })
        .collect();
    GlueMatrix::new(rows).expect("parent column is the identity, so rows are valid")
}

fn value_restricted_to(value: &Value, g: &Graph) -> Value {
    match value {
        Value::VertexSet(s) => {
            Value::VertexSet(s.iter().copied().filter(|&v| g.has_node(v)).collect())
        }
        Value::EdgeSet(s) => {
            Value::EdgeSet(s.iter().copied().filter(|&(u, v)| g.has_edge(u, v)).collect())
        }
        other => other.clone(),
    }
}

/// Restricts a whole-graph assignment of `f`'s free variables to the part's
/// vertex and edge set.
pub fn restrict_assignment(a: &Assignment, f: &MsoFormula, part: &Graph) -> Assignment {
    let mut out = Assignment::new();
    for (name, _) in f.free_decls() {
        if let Some(v) = a.get(name) {
            out = out.set(name.clone(), value_restricted_to(v, part));
        }
    }
    out
}

/// Restricts every set value of an assignment to the part's vertex and edge
/// set, keeping scalar values untouched. Unlike [`restrict_assignment`] this
/// needs no formula: every name in `a` survives.
pub fn restrict_sets(a: &Assignment, part: &Graph) -> Assignment {
    let mut out = Assignment::new();
    for name in a.names() {
        if let Some(v) = a.get(&name) {
            out = out.set(name, value_restricted_to(v, part));
        }
    }
    out
}

/// Glues two terminal graphs along `m`. See the module docs for the
/// concrete semantics; in particular identified terminals must share an id
/// and the operands may overlap only in identified terminals.
pub fn glue(
    g1: &WTerminalGraph,
    g2: &WTerminalGraph,
    m: &GlueMatrix,
) -> Result<WTerminalGraph, AlgebraError> {
    m.check_taus(g1.tau(), g2.tau())?;

    // resolve the result terminal list and check identifications
    let mut terminals = Vec::with_capacity(m.result_tau());
    let mut identified = BTreeSet::new();
    for &(a, b) in m.rows() {
        let t1 = (a > 0).then(|| g1.terminals[a as usize - 1]);
        let t2 = (b > 0).then(|| g2.terminals[b as usize - 1]);
        let id = match (t1, t2) {
            (Some(x), Some(y)) => {
                if x != y {
                    return Err(AlgebraError::BadMatrix(format!(
                        "cannot identify terminals {x} and {y}: ids differ"
                    )));
                }
                identified.insert(x);
                x
            }
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => unreachable!("matrix validation rejects all-zero rows"),
        };
        terminals.push(id);
    }
    if !terminals.windows(2).all(|w| w[0] < w[1]) {
        return Err(AlgebraError::BadMatrix(
            "result terminals are not ascending by id".into(),
        ));
    }

    // the operands may share exactly the identified terminals
    let v1: BTreeSet<NodeId> = g1.graph.nodes().collect();
    let v2: BTreeSet<NodeId> = g2.graph.nodes().collect();
    let shared: BTreeSet<NodeId> = v1.intersection(&v2).copied().collect();
    if shared != identified {
        return Err(AlgebraError::BadMatrix(format!(
            "operands share vertices {shared:?} but the matrix identifies {identified:?}"
        )));
    }

    // union of the two graphs; data on shared elements must agree
    let mut graph = g1.graph.clone();
    for v in g2.graph.nodes() {
        if !graph.has_node(v) {
            graph.add_node(v).expect("fresh vertex");
            graph
                .set_node_weight(v, g2.graph.node_weight(v))
                .expect("vertex just added");
        } else if graph.node_weight(v) != g2.graph.node_weight(v) {
            return Err(AlgebraError::BadMatrix(format!(
                "identified terminal {v} carries different node weights"
            )));
        }
        for label in g2.graph.node_labels(v) {
            if !graph.node_has_label(v, label) {
                if shared.contains(&v) && !g1.graph.node_has_label(v, label) {
                    return Err(AlgebraError::BadMatrix(format!(
                        "identified terminal {v} carries different labels"
                    )));
                }
                graph.add_node_label(v, label).expect("vertex exists");
            }
        }
        if shared.contains(&v) {
            for label in g1.graph.node_labels(v) {
                if !g2.graph.node_has_label(v, label) {
                    return Err(AlgebraError::BadMatrix(format!(
                        "identified terminal {v} carries different labels"
                    )));
                }
            }
        }
    }
    for (u, v) in g2.graph.edges() {
        if !graph.has_edge(u, v) {
            graph.add_edge(u, v).expect("endpoints exist and edge is fresh");
            graph
                .set_edge_weight(u, v, g2.graph.edge_weight(u, v))
                .expect("edge just added");
            for label in g2.graph.edge_labels(u, v) {
                graph.add_edge_label(u, v, label).expect("edge exists");
            }
        } else {
            // the edge is shared: both endpoints are identified terminals
            if graph.edge_weight(u, v) != g2.graph.edge_weight(u, v) {
                return Err(AlgebraError::BadMatrix(format!(
                    "shared edge {u}-{v} carries different weights"
                )));
            }
            let l1: BTreeSet<&str> = g1.graph.edge_labels(u, v).collect();
            let l2: BTreeSet<&str> = g2.graph.edge_labels(u, v).collect();
            if l1 != l2 {
                return Err(AlgebraError::BadMatrix(format!(
                    "shared edge {u}-{v} carries different labels"
                )));
            }
        }
    }

    // merge assignments: both sides must restrict to the same sets on the
    // shared vertices and edges
    let assignment = match (&g1.assignment, &g2.assignment) {
        (None, None) => None,
        (Some(a1), Some(a2)) => Some(merge_assignments(a1, a2, g1, g2, &shared)?),
        _ => {
            return Err(AlgebraError::IncompatibleAssignment(
                "one operand carries an assignment and the other does not".into(),
            ))
        }
    };

    let mut out = WTerminalGraph::new(graph, terminals)?;
    out.assignment = assignment;
    Ok(out)
}

fn merge_assignments(
    a1: &Assignment,
    a2: &Assignment,
    g1: &WTerminalGraph,
    g2: &WTerminalGraph,
    shared: &BTreeSet<NodeId>,
) -> Result<Assignment, AlgebraError> {
    let names1 = a1.names();
    let names2 = a2.names();
    if names1 != names2 {
        return Err(AlgebraError::IncompatibleAssignment(
            "operands assign different variables".into(),
        ));
    }
    let mut out = Assignment::new();
    for name in names1 {
        let (v1, v2) = (a1.get(&name).unwrap(), a2.get(&name).unwrap());
        let merged = match (v1, v2) {
            (Value::VertexSet(s1), Value::VertexSet(s2)) => {
                for &t in shared {
                    if s1.contains(&t) != s2.contains(&t) {
                        return Err(AlgebraError::IncompatibleAssignment(format!(
                            "`{name}` disagrees on identified terminal {t}"
                        )));
                    }
                }
                Value::VertexSet(s1.union(s2).copied().collect())
            }
            (Value::EdgeSet(s1), Value::EdgeSet(s2)) => {
                for &t in shared {
                    for &u in shared {
                        if t < u && g1.graph.has_edge(t, u) && g2.graph.has_edge(t, u) {
                            let e = ekey(t, u);
                            if s1.contains(&e) != s2.contains(&e) {
                                return Err(AlgebraError::IncompatibleAssignment(format!(
                                    "`{name}` disagrees on shared edge {t}-{u}"
                                )));
                            }
                        }
                    }
                }
                Value::EdgeSet(s1.union(s2).copied().collect())
            }
            _ => {
                return Err(AlgebraError::IncompatibleAssignment(format!(
                    "`{name}` has mismatched sorts"
                )))
            }
        };
        out = out.set(name, merged);
    }
    Ok(out)
}

/// The leaf graph of vertex `u` in an elimination forest over `g`: vertex
/// set is u's bag (u plus its ancestors, all terminal), edges are exactly
/// the edges of `g` from u to its ancestors, with weights and labels copied
/// from `g`. Every edge of `g` lands in exactly one leaf — the one of its
/// deeper endpoint.
pub fn leaf_graph(
    g: &Graph,
    forest: &crate::graph::EliminationForest,
    u: NodeId,
) -> WTerminalGraph {
    leaf_graph_for_bag(g, &forest.bag(u), u)
}

/// Same as [`leaf_graph`], but driven by an explicit bag instead of an
/// elimination forest: the part contains the bag vertices and exactly the
/// edges of `g` between `u` and another bag member.
pub fn leaf_graph_for_bag(g: &Graph, bag: &[NodeId], u: NodeId) -> WTerminalGraph {
    let mut part = Graph::new();
    for &v in bag {
        part.add_node(v).expect("bag vertices are distinct");
        part.set_node_weight(v, g.node_weight(v)).expect("vertex exists");
        for label in g.node_labels(v) {
            part.add_node_label(v, label).expect("vertex exists");
        }
    }
    for &a in bag {
        if a != u && g.has_edge(u, a) {
            part.add_edge(u, a).expect("bag contains both endpoints");
            part.set_edge_weight(u, a, g.edge_weight(u, a)).expect("edge exists");
            for label in g.edge_labels(u, a) {
                part.add_edge_label(u, a, label).expect("edge exists");
            }
        }
    }
    WTerminalGraph::new(part, bag.iter().copied()).expect("bags are valid terminal lists")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EliminationForest;
    use std::collections::BTreeMap;

    fn single_edge(u: u32, v: u32) -> WTerminalGraph {
        WTerminalGraph::base(Graph::from_edges([u, v], [(u, v)]).unwrap()).unwrap()
    }

    #[test]
    fn paths_grow_by_end_to_end_gluing() {
        // glue 1-2 and 2-3 sharing terminal 2, keeping terminals {1,3}
        let a = single_edge(1, 2);
        let b = single_edge(2, 3);
        // result terminals: 1 (rank 1 of a), 3 (rank 2 of b); 2 identified
        // via... 2 must be identified: row for it would keep it terminal.
        // Keep all three first, then check a drop variant.
        let keep_all = GlueMatrix::new(vec![(1, 0), (2, 1), (0, 2)]).unwrap();
        let p3 = glue(&a, &b, &keep_all).unwrap();
        assert_eq!(p3.graph.n(), 3);
        assert_eq!(p3.graph.m(), 2);
        assert_eq!(p3.terminals(), &[NodeId(1), NodeId(2), NodeId(3)]);

        // drop the far endpoint: it becomes interior
        let drop_end = GlueMatrix::new(vec![(1, 0), (2, 1)]).unwrap();
        let p3 = glue(&a, &b, &drop_end).unwrap();
        assert_eq!(p3.terminals(), &[NodeId(1), NodeId(2)]);
        assert_eq!(p3.graph.n(), 3);

        // a shared vertex must be identified by the matrix, never dropped
        let drop_mid = GlueMatrix::new(vec![(1, 0), (0, 2)]).unwrap();
        assert!(glue(&a, &b, &drop_mid).is_err());
    }

    #[test]
    fn identity_glue_unions_edges() {
        let mut g1 = Graph::from_edges(1..=3, [(1, 2)]).unwrap();
        let mut g2 = Graph::from_edges(1..=3, [(2, 3)]).unwrap();
        g1.add_node_label(NodeId(1), "x").unwrap();
        g2.add_node_label(NodeId(1), "x").unwrap();
        let a = WTerminalGraph::base(g1).unwrap();
        let b = WTerminalGraph::base(g2).unwrap();
        let id = GlueMatrix::new(vec![(1, 1), (2, 2), (3, 3)]).unwrap();
        let u = glue(&a, &b, &id).unwrap();
        assert_eq!(u.graph.m(), 2);
        assert!(u.graph.has_edge(NodeId(1), NodeId(2)));
        assert!(u.graph.has_edge(NodeId(2), NodeId(3)));
    }

    #[test]
    fn counts_follow_inclusion_exclusion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            // shared prefix of vertices 1..=s, part-1 extras 10.., part-2 extras 20..
            let s = rng.random_range(1..=3u32);
            let e1 = rng.random_range(0..=2u32);
            let e2 = rng.random_range(0..=2u32);
            let mk = |extra_base: u32, extra: u32, rng: &mut rand_chacha::ChaCha8Rng| {
                let mut g = Graph::new();
                for v in 1..=s {
                    g.add_node(NodeId(v)).unwrap();
                }
                for i in 0..extra {
                    g.add_node(NodeId(extra_base + i)).unwrap();
                }
                let nodes: Vec<NodeId> = g.nodes().collect();
                for (i, &u) in nodes.iter().enumerate() {
                    for &v in &nodes[i + 1..] {
                        if rng.random_bool(0.5) {
                            g.add_edge(u, v).unwrap();
                        }
                    }
                }
                g
            };
            let mut raw1 = mk(10, e1, &mut rng);
            let mut raw2 = mk(20, e2, &mut rng);
            // shared edges must agree between the operands: keep the
            // intersection-consistent subset by copying part-1 shared edges
            // into part 2 and removing the rest
            for u in 1..=s {
                for v in (u + 1)..=s {
                    let (u, v) = (NodeId(u), NodeId(v));
                    match (raw1.has_edge(u, v), raw2.has_edge(u, v)) {
                        (true, false) => {
                            raw2.add_edge(u, v).unwrap();
                        }
                        (false, true) => {
                            raw1.add_edge(u, v).unwrap();
                        }
                        _ => {}
                    }
                }
            }
            let a = WTerminalGraph::base(raw1).unwrap();
            let b = WTerminalGraph::base(raw2).unwrap();
            // identity on the shared prefix, keep everything
            let mut rows = Vec::new();
            let mut t1_ranks: BTreeMap<NodeId, u8> = BTreeMap::new();
            for (i, &t) in a.terminals().iter().enumerate() {
                t1_ranks.insert(t, (i + 1) as u8);
            }
            let all: BTreeSet<NodeId> =
                a.terminals().iter().chain(b.terminals()).copied().collect();
            for &t in &all {
                let r1 = t1_ranks.get(&t).copied().unwrap_or(0);
                let r2 = b
                    .terminal_rank(t)
                    .map(|i| (i + 1) as u8)
                    .unwrap_or(0);
                rows.push((r1, r2));
            }
            let m = GlueMatrix::new(rows).unwrap();
            let glued = glue(&a, &b, &m).unwrap();
            let (n1, n2) = (a.graph.n() as i64, b.graph.n() as i64);
            let (m1, m2) = (a.graph.m() as i64, b.graph.m() as i64);
            let shared_edges = a
                .graph
                .edges()
                .filter(|&(u, v)| b.graph.has_edge(u, v))
                .count() as i64;
            assert_eq!(glued.graph.n() as i64, n1 + n2 - s as i64);
            assert_eq!(glued.graph.m() as i64, m1 + m2 - shared_edges);
        }
    }

    #[test]
    fn mismatched_ids_and_overlaps_are_rejected()  {
        let a = single_edge(1, 2);
        let b = single_edge(3, 4);
        // identifying terminal 2 with terminal 3: ids differ
        let m = GlueMatrix::new(vec![(1, 0), (2, 1), (0, 2)]).unwrap();
        assert!(matches!(glue(&a, &b, &m), Err(AlgebraError::BadMatrix(_))));
        // overlap without identification: both contain vertex 2
        let c = single_edge(2, 5);
        let m = GlueMatrix::new(vec![(1, 0), (2, 0), (0, 1), (0, 2)]).unwrap();
        assert!(matches!(glue(&a, &c, &m), Err(AlgebraError::BadMatrix(_))));
    }

    #[test]
    fn assignments_must_agree_on_shared_elements() {
        use crate::mso::Value;
        let a = single_edge(1, 2)
            .with_assignment(Assignment::new().set("S", Value::VertexSet([NodeId(2)].into())));
        let b = single_edge(2, 3)
            .with_assignment(Assignment::new().set("S", Value::VertexSet([].into())));
        let keep_all = GlueMatrix::new(vec![(1, 0), (2, 1), (0, 2)]).unwrap();
        assert!(matches!(
            glue(&a, &b, &keep_all),
            Err(AlgebraError::IncompatibleAssignment(_))
        ));
        // agreeing sides union up
        let b = single_edge(2, 3).with_assignment(
            Assignment::new().set("S", Value::VertexSet([NodeId(2), NodeId(3)].into())),
        );
        let glued = glue(&a, &b, &keep_all).unwrap();
        let Some(Value::VertexSet(s)) = glued.assignment.as_ref().unwrap().get("S") else {
            panic!("vertex set expected")
        };
        assert_eq!(s, &[NodeId(2), NodeId(3)].into());
    }

    #[test]
    fn glue_matrix_for_builds_forget_matrices() {
        let child = [NodeId(2), NodeId(5), NodeId(9)];
        let parent = [NodeId(2), NodeId(9)];
        let m = glue_matrix_for(&child, &parent);
        assert_eq!(m.rows(), &[(1, 1), (3, 2)]); // 5 dropped
        let equal = glue_matrix_for(&parent, &parent);
        assert_eq!(equal.rows(), &[(1, 1), (2, 2)]);
    }

    #[test]
    fn leaf_graphs_partition_the_edges() {
        // P_4 with elimination tree 2(root) - {1, 3}, 3 - {4}
        let g = Graph::from_edges(1..=4, [(1, 2), (2, 3), (3, 4)]).unwrap();
        let parent: BTreeMap<NodeId, NodeId> = [
            (NodeId(1), NodeId(2)),
            (NodeId(2), NodeId(2)),
            (NodeId(3), NodeId(2)),
            (NodeId(4), NodeId(3)),
        ]
        .into();
        let f = EliminationForest::from_parent(parent).unwrap();
        let mut seen = Vec::new();
        for v in g.nodes() {
            let leaf = leaf_graph(&g, &f, v);
            assert!(leaf.is_base());
            seen.extend(leaf.graph.edges());
        }
        seen.sort();
        let all: Vec<_> = g.edges().collect();
        assert_eq!(seen, all, "each edge lands in exactly one leaf");
    }
}
