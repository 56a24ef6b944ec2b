//! A small library of standard formulas, written in the concrete syntax.
//!
//! These are used throughout the tests, the acceptance suite, and the
//! guide. Decision formulas are closed; optimization formulas declare one
//! free set variable named `S` (or `M` for edge sets).

use std::ops::Not;

use crate::graph::Graph;

use super::ast::{Atom, Body, MsoFormula, Sort};
use super::parse::parse_formula;

fn must(text: &str) -> MsoFormula {
    parse_formula(text).expect("library formula parses")
}

/// No three pairwise-adjacent vertices.
pub fn triangle_free() -> MsoFormula {
    must("~ exists_v x1. exists_v x2. exists_v x3. (adj(x1,x2) & adj(x2,x3) & adj(x3,x1))")
}

/// No cycle: there is no nonempty vertex set in which every member has two
/// distinct neighbours inside the set. (On simple graphs such a set exists
/// exactly when the graph has a cycle.)
pub fn acyclic() -> MsoFormula {
    must(
        "~ exists_vs X. ((exists_v w. w in X) \
         & forall_v x. (x in X -> exists_v y1. exists_v y2. \
         (y1 in X & y2 in X & ~ y1 = y2 & adj(x,y1) & adj(x,y2))))",
    )
}

/// The `red`/`blue` node labels form a proper 2-coloring: every vertex has
/// exactly one of the two labels and no edge joins two same-colored ends.
pub fn two_coloring_is_proper() -> MsoFormula {
    must(
        "(forall_v x. ((label(red,x) | label(blue,x)) & ~ (label(red,x) & label(blue,x)))) \
         & forall_v x. forall_v y. (adj(x,y) -> \
         ~ ((label(red,x) & label(red,y)) | (label(blue,x) & label(blue,y))))",
    )
}

/// Vertices can be covered by three independent sets.
pub fn three_colorable() -> MsoFormula {
    must(
        "exists_vs C1. exists_vs C2. exists_vs C3. \
         ((forall_v x. (x in C1 | x in C2 | x in C3)) \
         & forall_v x. forall_v y. (adj(x,y) -> \
         ~ ((x in C1 & y in C1) | (x in C2 & y in C2) | (x in C3 & y in C3))))",
    )
}

/// Every nonempty proper vertex subset has an edge leaving it.
pub fn connected() -> MsoFormula {
    must(
        "forall_vs X. ((exists_v x. x in X) & (exists_v y. ~ y in X) \
         -> exists_v u. exists_v w. (u in X & ~ w in X & adj(u,w)))",
    )
}

/// No edges at all.
pub fn edgeless() -> MsoFormula {
    must("~ exists_e e. e = e")
}

/// Some vertex is adjacent to every other vertex.
pub fn has_universal_vertex() -> MsoFormula {
    must("exists_v x. forall_v y. (x = y | adj(x,y))")
}

/// `S` (free vertex set) touches no edge inside itself.
pub fn independent_set() -> MsoFormula {
    must("free vs S\nforall_v x. forall_v y. (x in S & y in S -> ~ adj(x,y))")
}

/// `S` (free vertex set) touches every edge.
pub fn vertex_cover() -> MsoFormula {
    must("free vs S\nforall_e e. exists_v x. (x in S & inc(x,e))")
}

/// Every vertex is in `S` (free vertex set) or adjacent to a member.
pub fn dominating_set() -> MsoFormula {
    must("free vs S\nforall_v x. (x in S | exists_v y. (y in S & adj(x,y)))")
}

/// `M` (free edge set) covers every vertex exactly once.
pub fn perfect_matching() -> MsoFormula {
    must(
        "free es M\nforall_v x. exists_e e. (e in M & inc(x,e) \
         & forall_e f. (f in M & inc(x,f) -> e = f))",
    )
}

/// The ordered-triangle counting formula: three free vertex variables,
/// pairwise adjacent. Counting it counts each triangle 6 times.
pub fn ordered_triangles() -> MsoFormula {
    must("free v x1\nfree v x2\nfree v x3\nadj(x1,x2) & adj(x2,x3) & adj(x3,x1)")
}

/// A copy of `pattern` occurs in the graph: one existential vertex variable
/// per pattern vertex, pairwise distinct, with pattern edges required
/// present and — in induced mode — pattern non-edges required absent.
pub fn pattern_occurs(pattern: &Graph, induced: bool) -> MsoFormula {
    assert!(pattern.n() >= 1, "the pattern needs at least one vertex");
    let vars: Vec<String> = (1..=pattern.n()).map(|i| format!("y{i}")).collect();
    let index: std::collections::BTreeMap<_, _> =
        pattern.nodes().zip(vars.iter().cloned()).collect();
    let mut parts = Vec::new();
    let nodes: Vec<_> = pattern.nodes().collect();
    for (i, &u) in nodes.iter().enumerate() {
        for &v in &nodes[i + 1..] {
            let (xu, xv) = (index[&u].clone(), index[&v].clone());
            parts.push(Body::Atom(Atom::Eq(xu.clone(), xv.clone())).not());
            if pattern.has_edge(u, v) {
                parts.push(Body::Atom(Atom::Adj(xu, xv)));
            } else if induced {
                parts.push(Body::Atom(Atom::Adj(xu, xv)).not());
            }
        }
    }
    // a one-vertex pattern has no pair constraints: any vertex matches
    let mut body = if parts.is_empty() {
        let y = vars[0].clone();
        Body::Atom(Atom::Eq(y.clone(), y))
    } else {
        Body::all(parts)
    };
    for var in vars.into_iter().rev() {
        body = Body::exists(Sort::Vertex, var, body);
    }
    MsoFormula::new(vec![], body).expect("pattern formula is well-sorted")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;
    use crate::mso::{eval_bruteforce, Assignment};

    fn check(f: &MsoFormula, g: &Graph) -> bool {
        eval_bruteforce(g, f, &Assignment::new()).unwrap()
    }

    #[test]
    fn library_formulas_behave_on_small_graphs() {
        let p4 = Graph::from_edges(1..=4, [(1, 2), (2, 3), (3, 4)]).unwrap();
        let c4 = Graph::from_edges(1..=4, [(1, 2), (2, 3), (3, 4), (1, 4)]).unwrap();
        let k4 = Graph::from_edges(
            1..=4,
            [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)],
        )
        .unwrap();
        let star = Graph::from_edges(1..=4, [(1, 2), (1, 3), (1, 4)]).unwrap();
        let mut two_parts = Graph::new();
        for v in 1..=4 {
            two_parts.add_node(NodeId(v)).unwrap();
        }
        two_parts.add_edge(NodeId(1), NodeId(2)).unwrap();
        two_parts.add_edge(NodeId(3), NodeId(4)).unwrap();

        assert!(check(&triangle_free(), &p4));
        assert!(!check(&triangle_free(), &k4));
        assert!(check(&three_colorable(), &c4));
        assert!(!check(&three_colorable(), &k4)); // K_4 needs four colors
        assert!(check(&connected(), &p4));
        assert!(!check(&connected(), &two_parts));
        assert!(check(&edgeless(), &Graph::from_edges(1..=3, []).unwrap()));
        assert!(!check(&edgeless(), &p4));
        assert!(check(&has_universal_vertex(), &star));
        assert!(!check(&has_universal_vertex(), &p4));
    }

    #[test]
    fn pattern_formulas_distinguish_modes() {
        let p3 = Graph::from_edges(1..=3, [(1, 2), (2, 3)]).unwrap();
        let k3 = Graph::from_edges(1..=3, [(1, 2), (2, 3), (1, 3)]).unwrap();
        // P_3 occurs in K_3 as a subgraph but not induced
        assert!(check(&pattern_occurs(&p3, false), &k3));
        assert!(!check(&pattern_occurs(&p3, true), &k3));
        assert!(check(&pattern_occurs(&p3, true), &p3));
        // K_3 occurs in K_3 both ways
        assert!(check(&pattern_occurs(&k3, false), &k3));
        assert!(check(&pattern_occurs(&k3, true), &k3));
        // single-vertex pattern occurs in any nonempty graph
        let k1 = Graph::from_edges(1..=1, []).unwrap();
        assert!(check(&pattern_occurs(&k1, true), &p3));
    }
}
