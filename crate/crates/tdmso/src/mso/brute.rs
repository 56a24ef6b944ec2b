//! Brute-force semantics: the ground-truth oracle.
//!
//! Evaluation enumerates quantifier domains directly — vertices, edges, or
//! all subsets thereof — so it is exponential in set quantifiers and only
//! usable on small instances. A work estimate guards every entry point:
//! the product of quantifier domain sizes (first-order quantifiers
//! contribute n or m, set quantifiers 2^n or 2^m) must stay below 2^30,
//! which for a rank-r all-set-quantifier formula is the familiar
//! r·(n+m) ≤ 30 bound.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use num_bigint::BigUint;

use crate::graph::{ekey, Graph, NodeId};

use super::ast::{Atom, Body, MsoFormula, Sort};
use super::MsoError;

/// Normalized edge key: endpoints in ascending order.
pub type EdgeKey = (NodeId, NodeId);

/// A value for one variable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Vertex(NodeId),
    Edge(EdgeKey),
    VertexSet(BTreeSet<NodeId>),
    EdgeSet(BTreeSet<EdgeKey>),
}

impl Value {
    pub fn sort(&self) -> Sort {
        match self {
            Value::Vertex(_) => Sort::Vertex,
            Value::Edge(_) => Sort::Edge,
            Value::VertexSet(_) => Sort::VertexSet,
            Value::EdgeSet(_) => Sort::EdgeSet,
        }
    }

    /// Wraps a first-order value in a singleton set; identity on sets.
    pub fn into_singleton(self) -> Value {
        match self {
            Value::Vertex(v) => Value::VertexSet([v].into()),
            Value::Edge(e) => Value::EdgeSet([e].into()),
            set => set,
        }
    }
}

/// Maps free-variable names to values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    map: BTreeMap<String, Value>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: impl Into<String>, value: Value) -> Self {
        self.map.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.map.get(name)
    }

    /// The assigned variable names, ascending.
    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    /// Replaces every first-order value by its singleton set, matching what
    /// normalization does to free variables.
    pub fn into_singletons(self) -> Assignment {
        Assignment {
            map: self.map.into_iter().map(|(k, v)| (k, v.into_singleton())).collect(),
        }
    }

    /// Checks that every declared free variable of `f` is present with the
    /// declared sort and only references vertices/edges of `g`.
    pub fn validate(&self, g: &Graph, f: &MsoFormula) -> Result<(), MsoError> {
        for (name, sort) in f.free_decls() {
            let value = self
                .map
                .get(name)
                .ok_or_else(|| MsoError::BadAssignment(format!("`{name}` is unassigned")))?;
            if value.sort() != *sort {
                return Err(MsoError::BadAssignment(format!(
                    "`{name}` is declared {sort} but assigned a {}",
                    value.sort()
                )));
            }
            let ok = match value {
                Value::Vertex(v) => g.has_node(*v),
                Value::Edge((u, v)) => g.has_edge(*u, *v),
                Value::VertexSet(s) => s.iter().all(|&v| g.has_node(v)),
                Value::EdgeSet(s) => s.iter().all(|&(u, v)| g.has_edge(u, v)),
            };
            if !ok {
                return Err(MsoError::BadAssignment(format!(
                    "`{name}` references vertices or edges outside the graph"
                )));
            }
        }
        Ok(())
    }
}

const WORK_LIMIT: u128 = 1 << 30;

fn domain_size(sort: Sort, g: &Graph) -> u128 {
    let (n, m) = (g.n() as u32, g.m() as u32);
    match sort {
        Sort::Vertex => n.max(1) as u128,
        Sort::Edge => m.max(1) as u128,
        Sort::VertexSet => 1u128 << n.min(100),
        Sort::EdgeSet => 1u128 << m.min(100),
    }
}

fn body_work(b: &Body, g: &Graph) -> u128 {
    match b {
        Body::Atom(_) => 1,
        Body::Not(x) => body_work(x, g),
        Body::And(l, r) | Body::Or(l, r) | Body::Implies(l, r) => {
            body_work(l, g).saturating_add(body_work(r, g))
        }
        Body::Exists(sort, _, x) | Body::Forall(sort, _, x) => {
            domain_size(*sort, g).saturating_mul(body_work(x, g))
        }
    }
}

fn guard(extra_domains: &[Sort], f: &MsoFormula, g: &Graph) -> Result<(), MsoError> {
    let mut work = body_work(f.body(), g);
    for &s in extra_domains {
        work = work.saturating_mul(domain_size(s, g));
    }
    if work > WORK_LIMIT {
        return Err(MsoError::SizeLimit(format!(
            "estimated {work} evaluation steps exceeds the 2^30 budget \
             (n={}, m={}, rank={})",
            g.n(),
            g.m(),
            f.quantifier_rank()
        )));
    }
    Ok(())
}

struct Eval<'a> {
    g: &'a Graph,
    env: Vec<(String, Value)>,
}

impl Eval<'_> {
    fn get(&self, name: &str) -> &Value {
        self.env
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .expect("sort checking guarantees every variable is bound")
    }

    fn vertex(&self, name: &str) -> NodeId {
        match self.get(name) {
            Value::Vertex(v) => *v,
            _ => unreachable!("sort checking"),
        }
    }

    fn edge(&self, name: &str) -> EdgeKey {
        match self.get(name) {
            Value::Edge(e) => *e,
            _ => unreachable!("sort checking"),
        }
    }

    fn vset(&self, name: &str) -> &BTreeSet<NodeId> {
        match self.get(name) {
            Value::VertexSet(s) => s,
            _ => unreachable!("sort checking"),
        }
    }

    fn eset(&self, name: &str) -> &BTreeSet<EdgeKey> {
        match self.get(name) {
            Value::EdgeSet(s) => s,
            _ => unreachable!("sort checking"),
        }
    }

    fn atom(&self, a: &Atom) -> bool {
        match a {
            Atom::Adj(x, y) => self.g.has_edge(self.vertex(x), self.vertex(y)),
            Atom::Inc(v, e) => {
                let v = self.vertex(v);
                let (a, b) = self.edge(e);
                v == a || v == b
            }
            Atom::Eq(x, y) => self.get(x) == self.get(y),
            Atom::In(x, set) => match self.get(x) {
                Value::Vertex(v) => self.vset(set).contains(v),
                Value::Edge(e) => self.eset(set).contains(e),
                _ => unreachable!("sort checking"),
            },
            Atom::Label(name, x) => match self.get(x) {
                Value::Vertex(v) => self.g.node_has_label(*v, name),
                Value::Edge((u, v)) => self.g.edge_has_label(*u, *v, name),
                _ => unreachable!("sort checking"),
            },
            Atom::Sing(x) => match self.get(x) {
                Value::VertexSet(s) => s.len() == 1,
                Value::EdgeSet(s) => s.len() == 1,
                _ => unreachable!("sort checking"),
            },
            Atom::Sub(x, y) => match (self.get(x), self.get(y)) {
                (Value::VertexSet(a), Value::VertexSet(b)) => a.is_subset(b),
                (Value::EdgeSet(a), Value::EdgeSet(b)) => a.is_subset(b),
                _ => unreachable!("sort checking"),
            },
            Atom::AdjSet(x, y) => {
                let (a, b) = (self.vset(x), self.vset(y));
                a.iter().any(|&u| b.iter().any(|&v| self.g.has_edge(u, v)))
            }
            Atom::IncSet(x, y) => {
                let (vs, es) = (self.vset(x), self.eset(y));
                es.iter().any(|&(a, b)| vs.contains(&a) || vs.contains(&b))
            }
            Atom::LabelSet(name, x) => match self.get(x) {
                Value::VertexSet(s) => s.iter().any(|&v| self.g.node_has_label(v, name)),
                Value::EdgeSet(s) => {
                    s.iter().any(|&(u, v)| self.g.edge_has_label(u, v, name))
                }
                _ => unreachable!("sort checking"),
            },
        }
    }

    fn eval(&mut self, b: &Body) -> bool {
        match b {
            Body::Atom(a) => self.atom(a),
            Body::Not(x) => !self.eval(x),
            Body::And(l, r) => self.eval(l) && self.eval(r),
            Body::Or(l, r) => self.eval(l) || self.eval(r),
            Body::Implies(l, r) => !self.eval(l) || self.eval(r),
            Body::Exists(sort, var, x) => self.quantify(*sort, var, x, true),
            Body::Forall(sort, var, x) => !self.quantify(*sort, var, x, false),
        }
    }

    /// Searches the domain for a witness of `body` (when `positive`) or a
    /// counterexample of it (when negated universal).
    fn quantify(&mut self, sort: Sort, var: &str, body: &Body, positive: bool) -> bool {
        let mut found = false;
        for value in domain(self.g, sort) {
            self.env.push((var.to_string(), value));
            let v = self.eval(body);
            self.env.pop();
            if v == positive {
                found = true;
                break;
            }
        }
        found
    }
}

/// Enumerates a sort's domain in a fixed deterministic order: vertices and
/// edges ascending, subsets in binary-counter order over the ascending
/// element list.
fn domain(g: &Graph, sort: Sort) -> Vec<Value> {
    match sort {
        Sort::Vertex => g.nodes().map(Value::Vertex).collect(),
        Sort::Edge => g.edges().map(Value::Edge).collect(),
        Sort::VertexSet => subsets(&g.nodes().collect::<Vec<_>>())
            .into_iter()
            .map(Value::VertexSet)
            .collect(),
        Sort::EdgeSet => subsets(&g.edges().collect::<Vec<_>>())
            .into_iter()
            .map(Value::EdgeSet)
            .collect(),
    }
}

fn subsets<T: Copy + Ord>(items: &[T]) -> Vec<BTreeSet<T>> {
    let mut out = Vec::with_capacity(1 << items.len());
    for mask in 0u64..(1 << items.len()) {
        out.push(
            items
                .iter()
                .enumerate()
                .filter(|&(i, _)| mask >> i & 1 == 1)
                .map(|(_, &t)| t)
                .collect(),
        );
    }
    out
}

/// Evaluates `f` on `g` under `a` by direct enumeration.
pub fn eval_bruteforce(g: &Graph, f: &MsoFormula, a: &Assignment) -> Result<bool, MsoError> {
    a.validate(g, f)?;
    guard(&[], f, g)?;
    let env = f
        .free_decls()
        .iter()
        .map(|(name, _)| (name.clone(), a.get(name).unwrap().clone()))
        .collect();
    Ok(Eval { g, env }.eval(f.body()))
}

/// Exact optimum of the total weight of `S` over all sets satisfying
/// `f(S)`, where `S` is the unique free variable (a vertex or edge set).
/// Vertex sets weigh node weights, edge sets edge weights. Returns the best
/// weight and the first witness attaining it in enumeration order, or
/// `None` when no set satisfies the formula.
pub fn opt_bruteforce(
    g: &Graph,
    f: &MsoFormula,
    maximize: bool,
) -> Result<Option<(i64, Value)>, MsoError> {
    let [(name, sort)] = f.free_decls() else {
        return Err(MsoError::BadQuery(
            "optimization needs exactly one free variable".into(),
        ));
    };
    if !sort.is_set() {
        return Err(MsoError::BadQuery(format!(
            "optimization needs a free set variable but `{name}` has sort {sort}"
        )));
    }
    guard(&[*sort], f, g)?;
    let mut best: Option<(i64, Value)> = None;
    for value in domain(g, *sort) {
        let weight = match &value {
            Value::VertexSet(s) => s.iter().map(|&v| g.node_weight(v)).sum::<i64>(),
            Value::EdgeSet(s) => s.iter().map(|&(u, v)| g.edge_weight(u, v)).sum::<i64>(),
            _ => unreachable!("set sorts only"),
        };
        let a = Assignment::new().set(name.clone(), value.clone());
        if !eval_bruteforce(g, f, &a)? {
            continue;
        }
        let better = match &best {
            None => true,
            Some((w, _)) => {
                if maximize {
                    weight > *w
                } else {
                    weight < *w
                }
            }
        };
        if better {
            best = Some((weight, value));
        }
    }
    Ok(best)
}

/// Exact number of assignments of the declared free variables (ordered, in
/// declaration order) satisfying `f`.
pub fn count_bruteforce(g: &Graph, f: &MsoFormula) -> Result<BigUint, MsoError> {
    let sorts: Vec<Sort> = f.free_decls().iter().map(|&(_, s)| s).collect();
    guard(&sorts, f, g)?;
    let mut count = BigUint::ZERO;
    let mut stack: Vec<(usize, Assignment)> = vec![(0, Assignment::new())];
    while let Some((idx, partial)) = stack.pop() {
        if idx == f.free_decls().len() {
            if eval_bruteforce(g, f, &partial)? {
                count += 1u32;
            }
            continue;
        }
        let (name, sort) = &f.free_decls()[idx];
        for value in domain(g, *sort) {
            stack.push((idx + 1, partial.clone().set(name.clone(), value)));
        }
    }
    Ok(count)
}

/// The weight of a witness set under the graph's weights, for feasibility
/// re-checks.
pub fn witness_weight(g: &Graph, witness: &Value) -> i64 {
    match witness {
        Value::VertexSet(s) => s.iter().map(|&v| g.node_weight(v)).sum(),
        Value::EdgeSet(s) => s.iter().map(|&(u, v)| g.edge_weight(u, v)).sum(),
        Value::Vertex(v) => g.node_weight(*v),
        Value::Edge((u, v)) => g.edge_weight(*u, *v),
    }
}

/// Convenience: the normalized edge key for `(u, v)`.
pub fn edge_key(u: NodeId, v: NodeId) -> EdgeKey {
    ekey(u, v)
}

#[cfg(test)]
mod tests {
    use std::ops::Not;

    use super::*;
    use crate::mso::library;
    use crate::mso::parse_formula;

    fn complete(n: u32) -> Graph {
        let mut edges = Vec::new();
        for u in 1..=n {
            for v in (u + 1)..=n {
                edges.push((u, v));
            }
        }
        Graph::from_edges(1..=n, edges).unwrap()
    }

    fn path(n: u32) -> Graph {
        Graph::from_edges(1..=n, (1..n).map(|v| (v, v + 1))).unwrap()
    }

    fn cycle(n: u32) -> Graph {
        let mut edges: Vec<(u32, u32)> = (1..n).map(|v| (v, v + 1)).collect();
        edges.push((1, n));
        Graph::from_edges(1..=n, edges).unwrap()
    }

    #[test]
    fn triangle_freeness_matches_examples() {
        let f = library::triangle_free();
        assert!(!eval_bruteforce(&complete(3), &f, &Assignment::new()).unwrap());
        assert!(eval_bruteforce(&path(4), &f, &Assignment::new()).unwrap());
        assert!(eval_bruteforce(&cycle(4), &f, &Assignment::new()).unwrap());
        assert!(!eval_bruteforce(&complete(4), &f, &Assignment::new()).unwrap());
    }

    #[test]
    fn acyclicity_matches_examples() {
        let f = library::acyclic();
        assert!(eval_bruteforce(&path(4), &f, &Assignment::new()).unwrap());
        assert!(!eval_bruteforce(&cycle(4), &f, &Assignment::new()).unwrap());
    }

    #[test]
    fn acyclicity_agrees_with_union_find() {
        use rand::{Rng, SeedableRng};
        let f = library::acyclic();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let n = rng.random_range(1..=6u32);
            let mut g = Graph::new();
            for v in 1..=n {
                g.add_node(NodeId(v)).unwrap();
            }
            for u in 1..=n {
                for v in (u + 1)..=n {
                    if rng.random_bool(0.3) {
                        g.add_edge(NodeId(u), NodeId(v)).unwrap();
                    }
                }
            }
            // independent oracle: a graph is acyclic iff union-find never
            // merges two already-joined endpoints
            let mut parent: Vec<usize> = (0..=n as usize).collect();
            fn find(p: &mut Vec<usize>, x: usize) -> usize {
                if p[x] != x {
                    let r = find(p, p[x]);
                    p[x] = r;
                }
                p[x]
            }
            let mut acyclic = true;
            for (u, v) in g.edges() {
                let (ru, rv) = (
                    find(&mut parent, u.0 as usize),
                    find(&mut parent, v.0 as usize),
                );
                if ru == rv {
                    acyclic = false;
                    break;
                }
                parent[ru] = rv;
            }
            assert_eq!(
                eval_bruteforce(&g, &f, &Assignment::new()).unwrap(),
                acyclic,
                "graph edges: {:?}",
                g.edges().collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn labeled_two_coloring_check() {
        let f = library::two_coloring_is_proper();
        let mut g = cycle(4);
        for v in [1u32, 3] {
            g.add_node_label(NodeId(v), "red").unwrap();
        }
        for v in [2u32, 4] {
            g.add_node_label(NodeId(v), "blue").unwrap();
        }
        assert!(eval_bruteforce(&g, &f, &Assignment::new()).unwrap());
        // swap one endpoint to clash
        let mut bad = g.clone();
        bad.remove_node_label(NodeId(2), "blue");
        bad.add_node_label(NodeId(2), "red").unwrap();
        assert!(!eval_bruteforce(&bad, &f, &Assignment::new()).unwrap());
    }

    #[test]
    fn independent_set_optimum_on_c5() {
        let best = opt_bruteforce(&cycle(5), &library::independent_set(), true)
            .unwrap()
            .unwrap();
        assert_eq!(best.0, 2);
        let Value::VertexSet(s) = &best.1 else { panic!("vertex set witness") };
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn vertex_cover_minimum_on_k3() {
        let best = opt_bruteforce(&complete(3), &library::vertex_cover(), false)
            .unwrap()
            .unwrap();
        assert_eq!(best.0, 2);
    }

    #[test]
    fn minimize_with_empty_set_feasible_is_nonpositive() {
        let f = library::independent_set();
        let best = opt_bruteforce(&path(4), &f, false).unwrap().unwrap();
        assert!(best.0 <= 0);
        let Value::VertexSet(s) = &best.1 else { panic!("vertex set witness") };
        assert!(s.is_empty());
    }

    #[test]
    fn counts_match_hand_enumeration() {
        // ordered triangles in K_4: 4·3·2
        let triangles = parse_formula(
            "free v x1\nfree v x2\nfree v x3\nadj(x1,x2) & adj(x2,x3) & adj(x3,x1)",
        )
        .unwrap();
        assert_eq!(count_bruteforce(&complete(4), &triangles).unwrap(), 24u32.into());
        // every vertex satisfies x = x
        let refl = parse_formula("free v x1\nx1 = x1").unwrap();
        assert_eq!(count_bruteforce(&path(3), &refl).unwrap(), 3u32.into());
        // unsatisfiable
        let unsat = parse_formula("free v x1\n~ x1 = x1").unwrap();
        assert_eq!(count_bruteforce(&path(3), &unsat).unwrap(), BigUint::ZERO);
        // perfect matchings of C_6
        let pm = library::perfect_matching();
        assert_eq!(count_bruteforce(&cycle(6), &pm).unwrap(), 2u32.into());
    }

    #[test]
    fn closed_formula_count_equals_verdict() {
        let f = library::triangle_free();
        for g in [path(3), complete(3), cycle(5)] {
            let verdict = eval_bruteforce(&g, &f, &Assignment::new()).unwrap();
            let count = count_bruteforce(&g, &f).unwrap();
            assert_eq!(count, if verdict { 1u32.into() } else { BigUint::ZERO });
        }
    }

    #[test]
    fn negation_flips_the_verdict() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let formulas = [
            library::triangle_free(),
            library::acyclic(),
            library::connected(),
            library::edgeless(),
        ];
        for _ in 0..25 {
            let n = rng.random_range(1..=5u32);
            let mut g = Graph::new();
            for v in 1..=n {
                g.add_node(NodeId(v)).unwrap();
            }
            for u in 1..=n {
                for v in (u + 1)..=n {
                    if rng.random_bool(0.4) {
                        g.add_edge(NodeId(u), NodeId(v)).unwrap();
                    }
                }
            }
            for f in &formulas {
                let neg =
                    MsoFormula::new(f.free_decls().to_vec(), f.body().clone().not()).unwrap();
                assert_ne!(
                    eval_bruteforce(&g, f, &Assignment::new()).unwrap(),
                    eval_bruteforce(&g, &neg, &Assignment::new()).unwrap()
                );
            }
        }
    }

    #[test]
    fn the_guard_rejects_oversized_instances() {
        // rank-4 set quantification over a 10-vertex graph: 2^40 steps
        let f = parse_formula(
            "exists_vs A. exists_vs B. exists_vs C. exists_vs D. sub(A,B) & sub(B,C) & sub(C,D)",
        )
        .unwrap();
        let g = path(10);
        assert!(matches!(
            eval_bruteforce(&g, &f, &Assignment::new()),
            Err(MsoError::SizeLimit(_))
        ));
        // but rank-3 first-order quantification on a dense 6-vertex graph runs
        let g6 = complete(6);
        assert!(eval_bruteforce(&g6, &library::triangle_free(), &Assignment::new()).is_ok());
    }
}
