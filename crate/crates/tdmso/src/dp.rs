//! Sequential dynamic programming over canonical tree decompositions:
//! decide, optimize (with witness recovery), and count.
//!
//! The engine works on decompositions of the shape produced by
//! [`canonical_decomposition`](crate::graph::canonical_decomposition): one
//! bag per vertex, `bag(u) = {u} + bag(parent(u))`. Each node `u`
//! contributes a *leaf part* — the bag vertices plus the edges between `u`
//! and the rest of its bag — and parts are folded bottom-up with
//! [`glue`](crate::algebra::glue)-matrices that identify the whole parent
//! bag and drop the child's extra vertex. Because every graph edge joins an
//! ancestor–descendant pair, it lands in exactly one leaf part (the deeper
//! endpoint's), so the fold reassembles the graph exactly once.
//!
//! Three table styles run over the same fold:
//! - **decide**: one class per subtree (a sentence has a single class).
//! - **optimize**: class → best weight of an assignment in that class,
//!   with provenance for top-down witness extraction. Gluing double-counts
//!   the selected elements on the identified boundary, so each fold
//!   subtracts the weight of the overlap — which is well-defined because a
//!   class pins down its boundary selection exactly.
//! - **count**: class → number of assignments in that class. Restriction
//!   to the two operands is a bijection onto compatible pairs, so a plain
//!   sum–product is exact and no correction term exists.

use std::collections::BTreeMap;

use num_bigint::BigUint;

use crate::algebra::{
    compile_mso, glue_matrix_for, leaf_graph_for_bag, restrict_sets, AlgebraError, ClassId,
    GlueMatrix, RegularPredicate, SelectedSet, SetSort, WTerminalGraph,
};
use crate::graph::{Graph, NodeId, TreeDecomposition};
use crate::mso::{Assignment, MsoFormula, Value};

/// Hard cap on the number of leaf assignments enumerated at a single node
/// (product over the free variables). Bags stay small, so this only trips
/// on formulas with many free variables over a wide bag.
const MAX_LEAF_ASSIGNMENTS: u128 = 1 << 22;

/// Errors from the dynamic-programming layer.
#[derive(Debug, thiserror::Error)]
pub enum DpError {
    /// The decomposition's bags are larger than the predicate's terminal
    /// budget.
    #[error("bags of size {got} exceed the predicate's terminal budget {max}")]
    WidthExceeded { got: usize, max: usize },
    /// Not a valid canonical decomposition of the graph.
    #[error("invalid decomposition: {0}")]
    BadDecomposition(String),
    /// The predicate/assignment/graph combination is unusable as asked.
    #[error("bad input: {0}")]
    BadInput(String),
    /// No assignment of the free variable satisfies the property.
    #[error("no assignment satisfies the property on this graph")]
    Unsatisfiable,
    /// A leaf enumeration would be too large.
    #[error("instance too large: {0}")]
    TooLarge(String),
    /// An error bubbled up from the gluing algebra.
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Result of [`optimize`]: the extremal weight and one assignment
/// achieving it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Optimum {
    pub value: i64,
    pub witness: SelectedSet,
}

/// Per-node diagnostics: how many classes each subtree table held.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DpTrace {
    pub node_tables: BTreeMap<NodeId, usize>,
}

/// Decides a sentence (no free variables): does `g` satisfy the property?
///
/// Errors with [`DpError::BadInput`] when the predicate has free variables
/// (use [`decide_assigned`]) and [`DpError::WidthExceeded`] when the bags
/// do not fit the predicate's terminal budget.
pub fn decide(g: &Graph, td: &TreeDecomposition, p: &dyn RegularPredicate) -> Result<bool, DpError> {
    decide_traced(g, td, p).map(|(b, _)| b)
}

/// [`decide`], additionally reporting per-node table sizes.
pub fn decide_traced(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
) -> Result<(bool, DpTrace), DpError> {
    if !p.free_vars().is_empty() {
        return Err(DpError::BadInput(format!(
            "`{}` has free variables; use decide_assigned or count",
            p.name()
        )));
    }
    decide_with(g, td, p, None)
}

/// Decides a property with free variables under a fixed assignment: does
/// `g` satisfy the property with the free variables bound as given?
///
/// The assignment must bind every free variable of `p` to a value of the
/// right sort whose elements all lie in `g`.
pub fn decide_assigned(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    a: &Assignment,
) -> Result<bool, DpError> {
    check_assignment(g, p, a)?;
    decide_with(g, td, p, Some(a)).map(|(b, _)| b)
}

fn decide_with(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    a: Option<&Assignment>,
) -> Result<(bool, DpTrace), DpError> {
    check_instance(g, td, p)?;
    let mut trace = DpTrace::default();
    let roots = sorted_roots(td);
    let m1 = root_fold_matrix();
    let mut acc: Option<ClassId> = None;
    for &r in &roots {
        let c = decide_subtree(g, td, p, a, r, &mut trace)?;
        acc = Some(match acc {
            None => c,
            Some(prev) => p.compose(c, prev, &m1)?,
        });
    }
    let c = acc.expect("nonempty graph has at least one root");
    Ok((p.is_accepting(c)?, trace))
}

fn decide_subtree(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    a: Option<&Assignment>,
    u: NodeId,
    trace: &mut DpTrace,
) -> Result<ClassId, DpError> {
    let mut leaf = leaf_graph_for_bag(g, td.bag(u), u);
    if let Some(a) = a {
        let restricted = restrict_sets(a, &leaf.graph);
        leaf = leaf.with_assignment(restricted);
    }
    let mut acc = p.classify_base(&leaf)?;
    for v in sorted_children(td, u) {
        let cv = decide_subtree(g, td, p, a, v, trace)?;
        let m = glue_matrix_for(td.bag(v), td.bag(u));
        acc = p.compose(cv, acc, &m)?;
    }
    trace.node_tables.insert(u, 1);
    Ok(acc)
}

/// Finds an extremal-weight satisfying assignment for a predicate with
/// exactly one free set variable. Weights come from `g` (vertex weights
/// for a vertex-set variable, edge weights for an edge-set variable).
///
/// Errors with [`DpError::Unsatisfiable`] when no assignment satisfies the
/// property. The returned witness always satisfies the property and has
/// weight equal to `value`.
pub fn optimize(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    maximize: bool,
) -> Result<Optimum, DpError> {
    optimize_traced(g, td, p, maximize).map(|(o, _)| o)
}

/// [`optimize`], additionally reporting per-node table sizes.
pub fn optimize_traced(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    maximize: bool,
) -> Result<(Optimum, DpTrace), DpError> {
    check_instance(g, td, p)?;
    let [(var, sort)] = p.free_vars() else {
        return Err(DpError::BadInput(format!(
            "optimization needs exactly one free set variable, `{}` has {}",
            p.name(),
            p.free_vars().len()
        )));
    };
    let mut run = OptRun {
        g,
        td,
        p,
        var: var.clone(),
        sort: *sort,
        // Minimization is maximization of the negated weights; tables hold
        // signed weights throughout and the sign is undone at the end.
        sign: if maximize { 1 } else { -1 },
        runs: BTreeMap::new(),
    };

    let roots = sorted_roots(td);
    let m1 = root_fold_matrix();
    let mut forest: Vec<Step> = Vec::new();
    let mut acc_bag: Vec<NodeId> = Vec::new();
    for &r in &roots {
        run.subtree(r)?;
        let sub = run.runs[&r].last().expect("chain has a leaf step");
        if forest.is_empty() {
            let arg = sub
                .table
                .keys()
                .map(|&c| (c, Prov::Sub { node: r, class: ClassId(c) }))
                .collect();
            forest.push(Step { table: sub.table.clone(), arg });
        } else {
            let prev = forest.last().expect("nonempty").table.clone();
            let step = run.fold(&sub.table.clone(), td.bag(r), &prev, &acc_bag, &m1, r)?;
            forest.push(step);
        }
        acc_bag = td.bag(r).to_vec();
    }

    let last = forest.last().expect("nonempty graph has at least one root");
    let mut best: Option<(u32, i64)> = None;
    for (&c, &w) in &last.table {
        if run.p.is_accepting(ClassId(c))? && best.is_none_or(|(_, bw)| w > bw) {
            best = Some((c, w));
        }
    }
    let Some((c_star, w_star)) = best else {
        return Err(DpError::Unsatisfiable);
    };

    let mut parts: Vec<SelectedSet> = Vec::new();
    unfold(&run.runs, &forest, ClassId(c_star), &mut parts);
    let witness = union_selected(run.sort, &parts);
    let value = run.sign * w_star;
    debug_assert_eq!(selected_weight(g, &witness), value, "witness weight must match the table");

    let mut trace = DpTrace::default();
    for (&u, chain) in &run.runs {
        trace.node_tables.insert(u, chain.last().map_or(0, |s| s.table.len()));
    }
    Ok((Optimum { value, witness }, trace))
}

/// Counts the satisfying assignments of a predicate with at least one free
/// set variable. Exact (arbitrary precision).
pub fn count(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
) -> Result<BigUint, DpError> {
    count_traced(g, td, p).map(|(n, _)| n)
}

/// [`count`], additionally reporting per-node table sizes.
pub fn count_traced(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
) -> Result<(BigUint, DpTrace), DpError> {
    check_instance(g, td, p)?;
    if p.free_vars().is_empty() {
        return Err(DpError::BadInput(format!(
            "counting needs at least one free set variable; `{}` is a sentence",
            p.name()
        )));
    }
    let mut trace = DpTrace::default();
    let roots = sorted_roots(td);
    let m1 = root_fold_matrix();
    let mut acc: Option<BTreeMap<u32, BigUint>> = None;
    for &r in &roots {
        let sub = count_subtree(g, td, p, r, &mut trace)?;
        acc = Some(match acc {
            None => sub,
            Some(prev) => fold_counts(p, &sub, &prev, &m1)?,
        });
    }
    let table = acc.expect("nonempty graph has at least one root");
    let mut total = BigUint::ZERO;
    for (&c, n) in &table {
        if p.is_accepting(ClassId(c))? {
            total += n;
        }
    }
    Ok((total, trace))
}

fn count_subtree(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    u: NodeId,
    trace: &mut DpTrace,
) -> Result<BTreeMap<u32, BigUint>, DpError> {
    let leaf = leaf_graph_for_bag(g, td.bag(u), u);
    let mut table: BTreeMap<u32, BigUint> = BTreeMap::new();
    for a in leaf_assignments(&leaf, p.free_vars())? {
        let c = p.classify_base(&leaf.clone().with_assignment(a))?;
        *table.entry(c.0).or_default() += 1u32;
    }
    for v in sorted_children(td, u) {
        let sub = count_subtree(g, td, p, v, trace)?;
        let m = glue_matrix_for(td.bag(v), td.bag(u));
        table = fold_counts(p, &sub, &table, &m)?;
    }
    trace.node_tables.insert(u, table.len());
    Ok(table)
}

pub(crate) fn fold_counts(
    p: &dyn RegularPredicate,
    child: &BTreeMap<u32, BigUint>,
    acc: &BTreeMap<u32, BigUint>,
    m: &GlueMatrix,
) -> Result<BTreeMap<u32, BigUint>, DpError> {
    let mut out: BTreeMap<u32, BigUint> = BTreeMap::new();
    for (&c1, n1) in child {
        for (&c2, n2) in acc {
            if let Some(c) = p.try_compose(ClassId(c1), ClassId(c2), m)? {
                *out.entry(c.0).or_default() += n1 * n2;
            }
        }
    }
    Ok(out)
}

/// All assignments of the free variables over a leaf part: the cartesian
/// product of the subsets of the part's vertices (or edges) per variable.
pub(crate) fn leaf_assignments(
    leaf: &WTerminalGraph,
    free: &[(String, SetSort)],
) -> Result<Vec<Assignment>, DpError> {
    let verts: Vec<NodeId> = leaf.graph.nodes().collect();
    let edges: Vec<(NodeId, NodeId)> = leaf.graph.edges().collect();
    let mut work: u128 = 1;
    for (_, sort) in free {
        let n = match sort {
            SetSort::Vertices => verts.len(),
            SetSort::Edges => edges.len(),
        };
        work = work.saturating_mul(1u128 << n);
        if work > MAX_LEAF_ASSIGNMENTS {
            return Err(DpError::TooLarge(format!(
                "a leaf enumerates more than {MAX_LEAF_ASSIGNMENTS} assignments"
            )));
        }
    }
    let mut out = Vec::with_capacity(work as usize);
    let mut counters = vec![0usize; free.len()];
    loop {
        let mut a = Assignment::new();
        for (i, (name, sort)) in free.iter().enumerate() {
            let value = match sort {
                SetSort::Vertices => Value::VertexSet(
                    verts.iter().enumerate().filter(|(j, _)| counters[i] >> j & 1 == 1).map(|(_, &v)| v).collect(),
                ),
                SetSort::Edges => Value::EdgeSet(
                    edges.iter().enumerate().filter(|(j, _)| counters[i] >> j & 1 == 1).map(|(_, &e)| e).collect(),
                ),
            };
            a = a.set(name.clone(), value);
        }
        out.push(a);
        // odometer over the per-variable subset masks
        let mut i = 0;
        loop {
            if i == free.len() {
                return Ok(out);
            }
            let limit = match free[i].1 {
                SetSort::Vertices => 1usize << verts.len(),
                SetSort::Edges => 1usize << edges.len(),
            };
            counters[i] += 1;
            if counters[i] < limit {
                break;
            }
            counters[i] = 0;
            i += 1;
        }
    }
}

/// One step of an optimization chain: the table after folding in one more
/// operand, plus where each class's best value came from.
pub(crate) struct Step {
    pub(crate) table: BTreeMap<u32, i64>,
    pub(crate) arg: BTreeMap<u32, Prov>,
}

/// Provenance of a table entry, for top-down witness extraction.
pub(crate) enum Prov {
    /// Chosen directly at this node's leaf part: the selected elements.
    Leaf(SelectedSet),
    /// Copied from a subtree's final table (first root of the forest).
    Sub { node: NodeId, class: ClassId },
    /// Folded: best pair of a `node`-subtree class and the previous step's
    /// class.
    Fold { node: NodeId, sub: ClassId, prev: ClassId },
}

struct OptRun<'a> {
    g: &'a Graph,
    td: &'a TreeDecomposition,
    p: &'a dyn RegularPredicate,
    var: String,
    sort: SetSort,
    sign: i64,
    /// Per tree node, the chain of steps: leaf first, then one per child
    /// (ascending).
    runs: BTreeMap<NodeId, Vec<Step>>,
}

impl OptRun<'_> {
    fn subtree(&mut self, u: NodeId) -> Result<(), DpError> {
        let leaf = leaf_graph_for_bag(self.g, self.td.bag(u), u);
        let mut steps = vec![opt_leaf_step(self.g, self.p, &leaf, &self.var, self.sort, self.sign)?];
        for v in sorted_children(self.td, u) {
            self.subtree(v)?;
            let sub = self.runs[&v].last().expect("chain has a leaf step").table.clone();
            let prev = steps.last().expect("nonempty").table.clone();
            let m = glue_matrix_for(self.td.bag(v), self.td.bag(u));
            steps.push(self.fold(&sub, self.td.bag(v), &prev, self.td.bag(u), &m, v)?);
        }
        self.runs.insert(u, steps);
        Ok(())
    }

    fn fold(
        &self,
        child: &BTreeMap<u32, i64>,
        child_bag: &[NodeId],
        acc: &BTreeMap<u32, i64>,
        acc_bag: &[NodeId],
        m: &GlueMatrix,
        child_node: NodeId,
    ) -> Result<Step, DpError> {
        opt_fold(self.g, self.p, child, child_bag, acc, acc_bag, m, child_node, self.sign)
    }
}

/// Enumerates the free variable's subsets of a leaf part. Each leaf class
/// keeps its best (signed) weight and the subset achieving it. `weights`
/// may be any graph containing the part's elements with the right weights —
/// the full graph or the part itself.
pub(crate) fn opt_leaf_step(
    weights: &Graph,
    p: &dyn RegularPredicate,
    leaf: &WTerminalGraph,
    var: &str,
    sort: SetSort,
    sign: i64,
) -> Result<Step, DpError> {
    let verts: Vec<NodeId> = leaf.graph.nodes().collect();
    let edges: Vec<(NodeId, NodeId)> = leaf.graph.edges().collect();
    let count = match sort {
        SetSort::Vertices => verts.len(),
        SetSort::Edges => edges.len(),
    };
    let mut table: BTreeMap<u32, i64> = BTreeMap::new();
    let mut arg: BTreeMap<u32, Prov> = BTreeMap::new();
    for mask in 0usize..(1 << count) {
        let sel = match sort {
            SetSort::Vertices => SelectedSet::Vertices(
                verts.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &v)| v).collect(),
            ),
            SetSort::Edges => SelectedSet::Edges(
                edges.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &e)| e).collect(),
            ),
        };
        let a = Assignment::new().set(var.to_owned(), selected_value(&sel));
        let c = p.classify_base(&leaf.clone().with_assignment(a))?;
        let w = sign * selected_weight(weights, &sel);
        improve(&mut table, &mut arg, c.0, w, || Prov::Leaf(sel));
    }
    Ok(Step { table, arg })
}

/// Folds a child table into the accumulator. Classes pin down their
/// boundary selections, so the double-counted overlap weight is the same
/// for every assignment pair behind `(c1, c2)` — subtracting it keeps the
/// table exact. The overlap lies inside the identified boundary, so
/// `weights` only needs to cover the accumulator's bag.
#[allow(clippy::too_many_arguments)]
pub(crate) fn opt_fold(
    weights: &Graph,
    p: &dyn RegularPredicate,
    child: &BTreeMap<u32, i64>,
    child_bag: &[NodeId],
    acc: &BTreeMap<u32, i64>,
    acc_bag: &[NodeId],
    m: &GlueMatrix,
    child_node: NodeId,
    sign: i64,
) -> Result<Step, DpError> {
    let mut acc_sel: BTreeMap<u32, SelectedSet> = BTreeMap::new();
    for &c2 in acc.keys() {
        let mut sels = p.selected(ClassId(c2), acc_bag)?;
        acc_sel.insert(c2, sels.remove(0));
    }
    let mut table: BTreeMap<u32, i64> = BTreeMap::new();
    let mut arg: BTreeMap<u32, Prov> = BTreeMap::new();
    for (&c1, &w1) in child {
        let sel1 = p.selected(ClassId(c1), child_bag)?.remove(0);
        for (&c2, &w2) in acc {
            let Some(c) = p.try_compose(ClassId(c1), ClassId(c2), m)? else {
                continue;
            };
            let overlap = sign * overlap_weight(weights, &sel1, &acc_sel[&c2]);
            let w = w1.saturating_add(w2).saturating_sub(overlap);
            improve(&mut table, &mut arg, c.0, w, || Prov::Fold {
                node: child_node,
                sub: ClassId(c1),
                prev: ClassId(c2),
            });
        }
    }
    Ok(Step { table, arg })
}

/// Records `w` for class `c` if strictly better; ties keep the first
/// provenance encountered, so ascending scans break ties deterministically.
pub(crate) fn improve(
    table: &mut BTreeMap<u32, i64>,
    arg: &mut BTreeMap<u32, Prov>,
    c: u32,
    w: i64,
    prov: impl FnOnce() -> Prov,
) {
    match table.get(&c) {
        Some(&old) if old >= w => {}
        _ => {
            table.insert(c, w);
            arg.insert(c, prov());
        }
    }
}

/// Walks the provenance chains top-down, collecting the chosen leaf
/// selections of every node that contributed to `start`.
fn unfold(
    runs: &BTreeMap<NodeId, Vec<Step>>,
    forest: &[Step],
    start: ClassId,
    out: &mut Vec<SelectedSet>,
) {
    let mut stack: Vec<(&[Step], ClassId)> = vec![(forest, start)];
    while let Some((chain, mut target)) = stack.pop() {
        for step in chain.iter().rev() {
            match &step.arg[&target.0] {
                Prov::Leaf(sel) => {
                    out.push(sel.clone());
                    break;
                }
                Prov::Sub { node, class } => {
                    stack.push((&runs[node], *class));
                    break;
                }
                Prov::Fold { node, sub, prev } => {
                    stack.push((&runs[node], *sub));
                    target = *prev;
                }
            }
        }
    }
}

/// Checks that marking realizes the optimum: the marked elements satisfy
/// the property and their weight equals the [`optimize`] value.
///
/// `f` must have exactly one free set variable; the marked set collects
/// the vertices (or edges, by the variable's sort) carrying `mark_label`.
pub fn check_marked_optimal(
    g: &Graph,
    td: &TreeDecomposition,
    f: &MsoFormula,
    mark_label: &str,
    maximize: bool,
) -> Result<bool, DpError> {
    let p = compile_mso(f, (td.width() + 1).max(2))?;
    let [(var, sort)] = p.free_vars() else {
        return Err(DpError::BadInput(format!(
            "marking check needs exactly one free set variable, got {}",
            p.free_vars().len()
        )));
    };
    let marked = match sort {
        SetSort::Vertices => {
            SelectedSet::Vertices(g.nodes().filter(|&v| g.node_has_label(v, mark_label)).collect())
        }
        SetSort::Edges => SelectedSet::Edges(
            g.edges().filter(|&(u, v)| g.edge_has_label(u, v, mark_label)).collect(),
        ),
    };
    let a = Assignment::new().set(var.clone(), selected_value(&marked));
    let satisfied = decide_assigned(g, td, &p, &a)?;
    if !satisfied {
        return Ok(false);
    }
    let opt = optimize(g, td, &p, maximize)?;
    Ok(opt.value == selected_weight(g, &marked))
}

pub(crate) fn selected_value(sel: &SelectedSet) -> Value {
    match sel {
        SelectedSet::Vertices(s) => Value::VertexSet(s.clone()),
        SelectedSet::Edges(s) => Value::EdgeSet(s.clone()),
    }
}

/// Total weight of the selected elements, from `g`'s vertex/edge weights.
pub fn selected_weight(g: &Graph, sel: &SelectedSet) -> i64 {
    match sel {
        SelectedSet::Vertices(s) => s.iter().map(|&v| g.node_weight(v)).sum(),
        SelectedSet::Edges(s) => s.iter().map(|&(u, v)| g.edge_weight(u, v)).sum(),
    }
}

pub(crate) fn overlap_weight(g: &Graph, a: &SelectedSet, b: &SelectedSet) -> i64 {
    match (a, b) {
        (SelectedSet::Vertices(x), SelectedSet::Vertices(y)) => {
            x.intersection(y).map(|&v| g.node_weight(v)).sum()
        }
        (SelectedSet::Edges(x), SelectedSet::Edges(y)) => {
            x.intersection(y).map(|&(u, v)| g.edge_weight(u, v)).sum()
        }
        _ => 0,
    }
}

pub(crate) fn union_selected(sort: SetSort, parts: &[SelectedSet]) -> SelectedSet {
    match sort {
        SetSort::Vertices => {
            let mut s = std::collections::BTreeSet::new();
            for p in parts {
                if let SelectedSet::Vertices(x) = p {
                    s.extend(x.iter().copied());
                }
            }
            SelectedSet::Vertices(s)
        }
        SetSort::Edges => {
            let mut s = std::collections::BTreeSet::new();
            for p in parts {
                if let SelectedSet::Edges(x) = p {
                    s.extend(x.iter().copied());
                }
            }
            SelectedSet::Edges(s)
        }
    }
}

fn sorted_children(td: &TreeDecomposition, u: NodeId) -> Vec<NodeId> {
    let mut cs = td.children(u);
    cs.sort_unstable();
    cs
}

fn sorted_roots(td: &TreeDecomposition) -> Vec<NodeId> {
    let mut rs: Vec<NodeId> = td.roots().collect();
    rs.sort_unstable();
    rs
}

/// Matrix for folding a fresh root subtree (τ = 1) onto the accumulated
/// forest (τ = 1): keep the new root's terminal, drop the old one. The
/// operands are vertex-disjoint, so nothing is identified.
fn root_fold_matrix() -> GlueMatrix {
    GlueMatrix::new(vec![(1, 0)]).expect("constant matrix is valid")
}

fn check_instance(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
) -> Result<(), DpError> {
    if g.n() == 0 {
        return Err(DpError::BadInput("the graph has no vertices".into()));
    }
    let got = td.width() + 1;
    if got > p.width() {
        return Err(DpError::WidthExceeded { got, max: p.width() });
    }
    td.validate(g).map_err(DpError::BadDecomposition)?;
    ensure_canonical(g, td)
}

/// The fold relies on more than decomposition validity: bags must be keyed
/// by the graph's vertices with `bag(u) = {u} + bag(parent(u))` (so leaf
/// parts tile the edge set). This is exactly the shape
/// [`canonical_decomposition`](crate::graph::canonical_decomposition)
/// produces.
fn ensure_canonical(g: &Graph, td: &TreeDecomposition) -> Result<(), DpError> {
    let ids: Vec<NodeId> = td.bag_ids().collect();
    if ids.len() != g.n() || ids.iter().any(|&u| !g.has_node(u)) {
        return Err(DpError::BadDecomposition(
            "bag ids must be exactly the graph's vertices".into(),
        ));
    }
    for &u in &ids {
        let bag = td.bag(u);
        if bag.binary_search(&u).is_err() {
            return Err(DpError::BadDecomposition(format!("bag {u} misses its own vertex")));
        }
        match td.parent(u) {
            None => {
                if bag.len() != 1 {
                    return Err(DpError::BadDecomposition(format!(
                        "root bag {u} must contain only its vertex"
                    )));
                }
            }
            Some(p) => {
                let parent_bag = td.bag(p);
                let mut want = parent_bag.to_vec();
                want.push(u);
                want.sort();
                if parent_bag.binary_search(&u).is_ok() || want != bag {
                    return Err(DpError::BadDecomposition(format!(
                        "bag {u} must extend its parent's bag by exactly its vertex"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn check_assignment(
    g: &Graph,
    p: &dyn RegularPredicate,
    a: &Assignment,
) -> Result<(), DpError> {
    for (name, sort) in p.free_vars() {
        match (sort, a.get(name)) {
            (SetSort::Vertices, Some(Value::VertexSet(s))) => {
                if let Some(v) = s.iter().find(|&&v| !g.has_node(v)) {
                    return Err(DpError::BadInput(format!("`{name}` contains non-vertex {v}")));
                }
            }
            (SetSort::Edges, Some(Value::EdgeSet(s))) => {
                if let Some(&(u, v)) = s.iter().find(|&&(u, v)| !g.has_edge(u, v)) {
                    return Err(DpError::BadInput(format!("`{name}` contains non-edge {u}-{v}")));
                }
            }
            (_, Some(_)) => {
                return Err(DpError::BadInput(format!("`{name}` is bound to the wrong sort")));
            }
            (_, None) => {
                return Err(DpError::BadInput(format!("`{name}` is not bound")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::builtin_predicate;
    use crate::graph::{canonical_decomposition, exact_treedepth};
    use crate::mso::{count_bruteforce, eval_bruteforce, opt_bruteforce, parse_formula};
    use crate::mso::library;
    use std::collections::BTreeSet;

    fn graph_on(vs: &[u32], es: &[(u32, u32)]) -> Graph {
        Graph::from_edges(vs.iter().copied(), es.iter().copied()).unwrap()
    }

    fn decomp(g: &Graph) -> TreeDecomposition {
        let td = exact_treedepth(g).unwrap();
        canonical_decomposition(g, &td.forest).unwrap()
    }

    fn cycle(n: u32) -> Graph {
        let vs: Vec<u32> = (1..=n).collect();
        let mut es: Vec<(u32, u32)> = (1..n).map(|i| (i, i + 1)).collect();
        es.push((n, 1));
        graph_on(&vs, &es)
    }

    fn complete(n: u32) -> Graph {
        let vs: Vec<u32> = (1..=n).collect();
        let mut es = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                es.push((i, j));
            }
        }
        graph_on(&vs, &es)
    }

    #[test]
    fn decide_matches_brute_force_on_sentences() {
        let cases: Vec<(Graph, &str)> = vec![
            (cycle(4), "triangle-free, connected"),
            (complete(3), "has a triangle"),
            (graph_on(&[1, 2, 3, 4], &[(1, 2), (3, 4)]), "disconnected forest"),
            (graph_on(&[7], &[]), "a single vertex"),
        ];
        let formulas =
            [library::triangle_free(), library::connected(), library::acyclic()];
        for (g, what) in &cases {
            let td = decomp(g);
            for f in &formulas {
                let p = compile_mso(f, td.width() + 1).unwrap();
                let want = eval_bruteforce(g, f, &Assignment::new()).unwrap();
                let got = decide(g, &td, &p).unwrap();
                assert_eq!(got, want, "{} on {what}", p.name());
            }
        }
    }

    #[test]
    fn decide_rejects_free_variables_and_narrow_predicates() {
        let g = cycle(4);
        let td = decomp(&g);
        let is = builtin_predicate("independent_set").unwrap();
        assert!(matches!(decide(&g, &td, is.as_ref()), Err(DpError::BadInput(_))));

        let f = library::triangle_free();
        let narrow = compile_mso(&f, 1).unwrap();
        assert!(matches!(
            decide(&g, &td, &narrow),
            Err(DpError::WidthExceeded { got: 3, max: 1 })
        ));
    }

    #[test]
    fn decide_assigned_checks_concrete_sets() {
        let g = graph_on(&[1, 2, 3], &[(1, 2), (2, 3)]);
        let td = decomp(&g);
        let is = builtin_predicate("independent_set").unwrap();
        let ends = Assignment::new().set("S", Value::VertexSet([NodeId(1), NodeId(3)].into()));
        let pair = Assignment::new().set("S", Value::VertexSet([NodeId(1), NodeId(2)].into()));
        assert!(decide_assigned(&g, &td, is.as_ref(), &ends).unwrap());
        assert!(!decide_assigned(&g, &td, is.as_ref(), &pair).unwrap());

        let stray = Assignment::new().set("S", Value::VertexSet([NodeId(9)].into()));
        assert!(matches!(
            decide_assigned(&g, &td, is.as_ref(), &stray),
            Err(DpError::BadInput(_))
        ));
    }

    #[test]
    fn optimize_solves_the_classic_small_instances() {
        // Max independent set of a 5-cycle has two vertices.
        let c5 = cycle(5);
        let td = decomp(&c5);
        let is = builtin_predicate("independent_set").unwrap();
        let best = optimize(&c5, &td, is.as_ref(), true).unwrap();
        assert_eq!(best.value, 2);
        let SelectedSet::Vertices(s) = &best.witness else { panic!("vertex witness") };
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| c5.has_node(*v)));

        // Min vertex cover of a triangle has two vertices.
        let k3 = complete(3);
        let td = decomp(&k3);
        let vc = builtin_predicate("vertex_cover").unwrap();
        let best = optimize(&k3, &td, vc.as_ref(), false).unwrap();
        assert_eq!(best.value, 2);

        // A single vertex of weight 7 is its own maximum independent set.
        let mut one = graph_on(&[4], &[]);
        one.set_node_weight(NodeId(4), 7).unwrap();
        let td = decomp(&one);
        let best = optimize(&one, &td, is.as_ref(), true).unwrap();
        assert_eq!(best.value, 7);
        assert_eq!(best.witness, SelectedSet::Vertices([NodeId(4)].into()));
    }

    #[test]
    fn optimize_agrees_with_brute_force_under_weights() {
        let mut g = graph_on(&[1, 2, 3, 4, 5], &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 5)]);
        for (v, w) in [(1, 3), (2, -2), (3, 5), (4, 1), (5, 4)] {
            g.set_node_weight(NodeId(v), w).unwrap();
        }
        let td = decomp(&g);
        let f = library::independent_set();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        for maximize in [true, false] {
            let got = optimize(&g, &td, &p, maximize).unwrap();
            let (want, _) = opt_bruteforce(&g, &f, maximize).unwrap().expect("satisfiable");
            assert_eq!(got.value, want, "maximize={maximize}");
            let a = Assignment::new().set("S", selected_value(&got.witness));
            assert!(eval_bruteforce(&g, &f, &a).unwrap());
            assert_eq!(selected_weight(&g, &got.witness), got.value);
        }
    }

    #[test]
    fn optimize_reports_unsatisfiable_properties() {
        let g = cycle(4);
        let td = decomp(&g);
        let f = parse_formula("free vs S\n~ forall_v x. x = x").unwrap();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        assert!(matches!(optimize(&g, &td, &p, true), Err(DpError::Unsatisfiable)));
    }

    #[test]
    fn count_reproduces_the_fixed_examples() {
        // Independent sets of a 3-path: {}, {1}, {2}, {3}, {1,3}.
        let p3 = graph_on(&[1, 2, 3], &[(1, 2), (2, 3)]);
        let td = decomp(&p3);
        let f = library::independent_set();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        assert_eq!(count(&p3, &td, &p).unwrap(), BigUint::from(5u32));

        // Ordered triangles of a 4-clique: 4 triangles, 6 orders each.
        let k4 = complete(4);
        let td = decomp(&k4);
        let f = library::ordered_triangles();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        assert_eq!(count(&k4, &td, &p).unwrap(), BigUint::from(24u32));

        // Perfect matchings of a 6-cycle: alternate edges, two ways.
        let c6 = cycle(6);
        let td = decomp(&c6);
        let f = library::perfect_matching();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        assert_eq!(count(&c6, &td, &p).unwrap(), BigUint::from(2u32));
    }

    #[test]
    fn count_agrees_with_brute_force_on_random_graphs() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(0x5150);
        let f = library::independent_set();
        for _ in 0..20 {
            let n = rng.random_range(1..=6u32);
            let vs: Vec<u32> = (1..=n).collect();
            let mut es = Vec::new();
            for i in 1..=n {
                for j in (i + 1)..=n {
                    if rng.random_bool(0.5) {
                        es.push((i, j));
                    }
                }
            }
            let g = graph_on(&vs, &es);
            let td = decomp(&g);
            let p = compile_mso(&f, td.width() + 1).unwrap();
            let got = count(&g, &td, &p).unwrap();
            let want = count_bruteforce(&g, &f).unwrap();
            assert_eq!(got, want, "n={n} es={es:?}");
        }
    }

    #[test]
    fn marked_sets_are_recognized_as_optimal_or_not() {
        // A 5-cycle with two non-adjacent marked vertices: a maximum
        // independent set, so the check passes.
        let mut g = cycle(5);
        g.add_node_label(NodeId(1), "opt").unwrap();
        g.add_node_label(NodeId(3), "opt").unwrap();
        let td = decomp(&g);
        let f = library::independent_set();
        assert!(check_marked_optimal(&g, &td, &f, "opt", true).unwrap());

        // Marking only one vertex is independent but not maximum.
        let mut g = cycle(5);
        g.add_node_label(NodeId(2), "opt").unwrap();
        let td = decomp(&g);
        assert!(!check_marked_optimal(&g, &td, &f, "opt", true).unwrap());

        // Marking two adjacent vertices is not independent at all.
        let mut g = cycle(5);
        g.add_node_label(NodeId(1), "opt").unwrap();
        g.add_node_label(NodeId(2), "opt").unwrap();
        let td = decomp(&g);
        assert!(!check_marked_optimal(&g, &td, &f, "opt", true).unwrap());
    }

    #[test]
    fn traces_record_a_table_size_per_vertex() {
        let g = cycle(4);
        let td = decomp(&g);
        let f = library::independent_set();
        let p = compile_mso(&f, td.width() + 1).unwrap();
        let (_, trace) = count_traced(&g, &td, &p).unwrap();
        let nodes: BTreeSet<NodeId> = g.nodes().collect();
        assert_eq!(trace.node_tables.keys().copied().collect::<BTreeSet<_>>(), nodes);
        assert!(trace.node_tables.values().all(|&s| s > 0));
    }
}
