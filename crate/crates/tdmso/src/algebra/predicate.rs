//! Compiling a normalized formula into a regular predicate.
//!
//! The class of a terminal graph is its *type*: the truth pattern of all
//! atoms over the current variables, the boundary structure the atoms can
//! still see (terminal adjacency, per-variable terminal masks, interior
//! counts capped at 2 — enough to decide `sing`), plus, per quantifier
//! level, the set of types reachable by extending the variable stack with
//! one more set. Types are interned hash-consed nodes, so equality of
//! classes is id equality and composition can be memoized.
//!
//! Levels whose quantifiers all start with a `sing(X) &` guard (the shape
//! normalization emits for first-order variables) enumerate only the empty
//! set and singletons instead of all 2^n subsets; the capped interior count
//! keeps this closed under composition.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use crate::graph::{ekey, NodeId};
use crate::mso::{normalize, Atom, Body, MsoFormula, Value};

use super::glue::MAX_TERMINALS;
use super::types::{
    bit, dropped_bits, dropped_pairs, remap_bits, remap_pairs, term_pair, ClassId,
    RegularPredicate, SelectedSet, SetSort,
};
use super::{AlgebraError, GlueMatrix, WTerminalGraph};

/// Default cap on the number of interned types per predicate.
pub const DEFAULT_CLASS_BUDGET: usize = 1_000_000;

/// Free variables plus quantifier rank must fit in this many slots (sized
/// so ordered slot pairs index into a `u128` row).
const MAX_SLOTS: usize = 11;

/// Cap on the estimated number of set enumerations per classification.
const MAX_ENUM_WORK: u128 = 1 << 28;

/// Index of the ordered slot pair (i, j) in a `u128` atom row.
fn slot_pair(i: usize, j: usize) -> u32 {
    debug_assert!(i < MAX_SLOTS && j < MAX_SLOTS);
    (i * MAX_SLOTS + j) as u32
}

/// What a predicate remembers about one set variable: its restriction to
/// the terminals (and boundary edges) plus how many members are interior,
/// capped at 2 — 0, 1, and "at least 2" is all `sing` needs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct VarTrace {
    sort: SetSort,
    vmask: u32,
    emask: u128,
    interior: u8,
}

impl VarTrace {
    /// Cardinality, exact up to 2 ("2" means at least two).
    fn capped_card(&self) -> u32 {
        let boundary = match self.sort {
            SetSort::Vertices => self.vmask.count_ones(),
            SetSort::Edges => self.emask.count_ones(),
        };
        (boundary + u32::from(self.interior)).min(2)
    }
}

/// The quantifier-free part of a type: everything atoms over the current
/// variable stack can observe, plus the boundary structure composition
/// needs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Tp0 {
    tau: u8,
    /// Adjacency among terminals *within this graph*, as terminal-pair bits.
    term_adj: u128,
    /// One trace per variable slot: free variables first, then quantified.
    traces: Vec<VarTrace>,
    /// `adj[slot_pair(i, j)]`: some member of slot i is adjacent to some
    /// member of slot j (vertex sorts; stored symmetrically).
    adj: u128,
    /// `inc[slot_pair(i, j)]`: some vertex in slot i lies on some edge in
    /// slot j.
    inc: u128,
    /// `sub[slot_pair(i, j)]`: slot i is a subset of slot j (same sort).
    sub: u128,
    /// Per vocabulary label, the slots containing a member with that label.
    labels: Vec<u32>,
}

/// An interned type: the quantifier-free part plus, for the next level, the
/// types reachable by pushing one more vertex set / edge set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct TypeNode {
    base: Tp0,
    ext_v: Vec<u32>,
    ext_e: Vec<u32>,
}

/// What each quantifier level needs: whether vertex/edge extensions exist
/// at all, and whether every quantifier of that sort at this level is
/// singleton-guarded (then only ∅ and singletons are enumerated).
#[derive(Clone, Copy, Debug)]
struct LevelPlan {
    need_v: bool,
    cap_v: bool,
    need_e: bool,
    cap_e: bool,
}

impl Default for LevelPlan {
    fn default() -> Self {
        LevelPlan { need_v: false, cap_v: true, need_e: false, cap_e: true }
    }
}

impl LevelPlan {
    fn capped(&self, sort: SetSort) -> bool {
        match sort {
            SetSort::Vertices => self.cap_v,
            SetSort::Edges => self.cap_e,
        }
    }
}

/// A concrete value on the variable stack during classification.
#[derive(Clone, Debug)]
enum SlotVal {
    V(BTreeSet<NodeId>),
    E(BTreeSet<(NodeId, NodeId)>),
}

/// Memo key for base (all-terminal) graphs: the full ordered boundary
/// structure. Two base graphs with equal keys are isomorphic respecting
/// terminal order and assignment, so they share a class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct BaseKey {
    tau: u8,
    term_adj: u128,
    vlabels: Vec<u32>,
    elabels: Vec<u128>,
    free: Vec<VarTrace>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<TypeNode>,
    ids: HashMap<TypeNode, u32>,
    base_memo: HashMap<BaseKey, u32>,
    compose_memo: HashMap<(u32, u32, GlueMatrix), Option<u32>>,
    frozen: bool,
}

/// A regular predicate compiled from a formula. See the module docs.
pub struct CompiledPredicate {
    name: String,
    formula: MsoFormula,
    vocab: Vec<String>,
    free: Vec<(String, SetSort)>,
    rank: usize,
    width: usize,
    plans: Vec<LevelPlan>,
    budget: usize,
    inner: Mutex<Inner>,
}

/// Compiles `f` (normalized first if it is not already) into a regular
/// predicate for graphs with at most `w` terminals, with the default class
/// budget.
pub fn compile_mso(f: &MsoFormula, w: usize) -> Result<CompiledPredicate, AlgebraError> {
    compile_mso_with_budget(f, w, DEFAULT_CLASS_BUDGET)
}

/// As [`compile_mso`], with an explicit cap on interned types.
pub fn compile_mso_with_budget(
    f: &MsoFormula,
    w: usize,
    budget: usize,
) -> Result<CompiledPredicate, AlgebraError> {
    if w == 0 || w > MAX_TERMINALS {
        return Err(AlgebraError::WidthExceeded { got: w, max: MAX_TERMINALS });
    }
    let formula = normalize(f);
    let free: Vec<(String, SetSort)> = formula
        .free_decls()
        .iter()
        .map(|(name, sort)| {
            let set_sort = SetSort::from_sort(*sort)
                .expect("normalization leaves only set-sorted free variables");
            (name.clone(), set_sort)
        })
        .collect();
    let rank = formula.quantifier_rank() as usize;
    if free.len() + rank > MAX_SLOTS {
        return Err(AlgebraError::SizeLimit(format!(
            "{} free variables plus quantifier rank {rank} exceeds the {MAX_SLOTS}-slot budget",
            free.len()
        )));
    }
    let mut plans = vec![LevelPlan::default(); rank];
    scan_plans(formula.body(), 0, &mut plans);
    let name = {
        let mut line = formula.to_string().replace('\n', "; ");
        if line.len() > 60 {
            line.truncate(57);
            line.push_str("...");
        }
        format!("mso[{line}]")
    };
    Ok(CompiledPredicate {
        name,
        vocab: formula.labels_mentioned().into_iter().collect(),
        formula,
        free,
        rank,
        width: w,
        plans,
        budget,
        inner: Mutex::new(Inner::default()),
    })
}

/// Registers every quantifier's level needs; `depth` is the number of
/// quantifiers already entered.
fn scan_plans(body: &Body, depth: usize, plans: &mut [LevelPlan]) {
    match body {
        Body::Exists(sort, var, inner) => {
            let guarded = sing_guarded(inner, var);
            let plan = &mut plans[depth];
            match SetSort::from_sort(*sort).expect("normalized quantifiers are set-sorted") {
                SetSort::Vertices => {
                    plan.need_v = true;
                    plan.cap_v &= guarded;
                }
                SetSort::Edges => {
                    plan.need_e = true;
                    plan.cap_e &= guarded;
                }
            }
            scan_plans(inner, depth + 1, plans);
        }
        Body::Not(b) => scan_plans(b, depth, plans),
        Body::And(l, r) | Body::Or(l, r) => {
            scan_plans(l, depth, plans);
            scan_plans(r, depth, plans);
        }
        Body::Atom(_) => {}
        Body::Implies(..) | Body::Forall(..) => {
            unreachable!("normalized bodies contain no implications or universal quantifiers")
        }
    }
}

/// Recognizes the `sing(x) & …` prefix normalization puts under quantifiers
/// that came from first-order variables.
fn sing_guarded(body: &Body, var: &str) -> bool {
    matches!(body, Body::And(l, _)
        if matches!(&**l, Body::Atom(Atom::Sing(v)) if v == var))
}

impl CompiledPredicate {
    pub fn formula(&self) -> &MsoFormula {
        &self.formula
    }

    fn p(&self) -> usize {
        self.free.len()
    }

    /// Estimated number of stack extensions classification will enumerate
    /// from `level` on.
    fn enum_work(&self, n: usize, m: usize, level: usize) -> u128 {
        let mut work: u128 = 1;
        for plan in &self.plans[level..] {
            let mut per: u128 = 1;
            if plan.need_v {
                per = per.saturating_mul(if plan.cap_v {
                    n as u128 + 1
                } else if n >= 100 {
                    u128::MAX
                } else {
                    1u128 << n
                });
            }
            if plan.need_e {
                per = per.saturating_mul(if plan.cap_e {
                    m as u128 + 1
                } else if m >= 100 {
                    u128::MAX
                } else {
                    1u128 << m
                });
            }
            work = work.saturating_mul(per);
        }
        work
    }

    /// Resolves the free-variable slot values from the graph's assignment.
    fn free_slots(&self, g: &WTerminalGraph) -> Result<Vec<SlotVal>, AlgebraError> {
        let mut slots = Vec::with_capacity(self.free.len());
        for (name, sort) in &self.free {
            let value = g
                .assignment
                .as_ref()
                .and_then(|a| a.get(name))
                .ok_or_else(|| {
                    AlgebraError::IncompatibleAssignment(format!(
                        "graph carries no value for free variable `{name}`"
                    ))
                })?
                .clone()
                .into_singleton();
            match (sort, value) {
                (SetSort::Vertices, Value::VertexSet(s)) => {
                    if let Some(v) = s.iter().find(|&&v| !g.graph.has_node(v)) {
                        return Err(AlgebraError::IncompatibleAssignment(format!(
                            "`{name}` contains {v}, which is not a vertex of the graph"
                        )));
                    }
                    slots.push(SlotVal::V(s));
                }
                (SetSort::Edges, Value::EdgeSet(s)) => {
                    if let Some(&(u, v)) = s.iter().find(|&&(u, v)| !g.graph.has_edge(u, v)) {
                        return Err(AlgebraError::IncompatibleAssignment(format!(
                            "`{name}` contains {u}-{v}, which is not an edge of the graph"
                        )));
                    }
                    slots.push(SlotVal::E(s));
                }
                (_, value) => {
                    return Err(AlgebraError::IncompatibleAssignment(format!(
                        "`{name}` is assigned a {} but the predicate needs a set of {}",
                        value.sort(),
                        match sort {
                            SetSort::Vertices => "vertices",
                            SetSort::Edges => "edges",
                        }
                    )));
                }
            }
        }
        Ok(slots)
    }

    /// The quantifier-free part of the type of `g` under the given variable
    /// stack.
    fn tp0_of(&self, g: &WTerminalGraph, slots: &[SlotVal]) -> Tp0 {
        let terms = g.terminals();
        let tau = terms.len();
        let rank_of = |v: NodeId| terms.binary_search(&v).ok();

        let mut term_adj: u128 = 0;
        for r in 0..tau {
            for s in r + 1..tau {
                if g.graph.has_edge(terms[r], terms[s]) {
                    term_adj |= 1 << term_pair(r, s);
                }
            }
        }

        let mut traces = Vec::with_capacity(slots.len());
        for slot in slots {
            traces.push(match slot {
                SlotVal::V(set) => {
                    let mut vmask = 0u32;
                    let mut interior = 0u32;
                    for &v in set {
                        match rank_of(v) {
                            Some(r) => vmask |= 1 << r,
                            None => interior += 1,
                        }
                    }
                    VarTrace {
                        sort: SetSort::Vertices,
                        vmask,
                        emask: 0,
                        interior: interior.min(2) as u8,
                    }
                }
                SlotVal::E(set) => {
                    let mut emask = 0u128;
                    let mut interior = 0u32;
                    for &(u, v) in set {
                        match (rank_of(u), rank_of(v)) {
                            (Some(r), Some(s)) => emask |= 1 << term_pair(r.min(s), r.max(s)),
                            _ => interior += 1,
                        }
                    }
                    VarTrace {
                        sort: SetSort::Edges,
                        vmask: 0,
                        emask,
                        interior: interior.min(2) as u8,
                    }
                }
            });
        }

        // atom rows: adjacency via one pass over the edges, incidence via
        // one pass over each edge-set slot, containment and labels directly
        let mut adj = 0u128;
        for (u, v) in g.graph.edges() {
            let mut mu = 0u16;
            let mut mv = 0u16;
            for (i, slot) in slots.iter().enumerate() {
                if let SlotVal::V(set) = slot {
                    if set.contains(&u) {
                        mu |= 1 << i;
                    }
                    if set.contains(&v) {
                        mv |= 1 << i;
                    }
                }
            }
            for i in 0..slots.len() {
                if mu >> i & 1 == 0 {
                    continue;
                }
                for j in 0..slots.len() {
                    if mv >> j & 1 == 1 {
                        adj |= 1 << slot_pair(i, j);
                        adj |= 1 << slot_pair(j, i);
                    }
                }
            }
        }

        let mut inc = 0u128;
        for (j, slot) in slots.iter().enumerate() {
            let SlotVal::E(set) = slot else { continue };
            for &(u, v) in set {
                for (i, other) in slots.iter().enumerate() {
                    if let SlotVal::V(vs) = other {
                        if vs.contains(&u) || vs.contains(&v) {
                            inc |= 1 << slot_pair(i, j);
                        }
                    }
                }
            }
        }

        let mut sub = 0u128;
        for (i, a) in slots.iter().enumerate() {
            for (j, b) in slots.iter().enumerate() {
                let contained = match (a, b) {
                    (SlotVal::V(x), SlotVal::V(y)) => x.is_subset(y),
                    (SlotVal::E(x), SlotVal::E(y)) => x.is_subset(y),
                    _ => false,
                };
                if contained {
                    sub |= 1 << slot_pair(i, j);
                }
            }
        }

        let labels = self
            .vocab
            .iter()
            .map(|l| {
                let mut row = 0u32;
                for (i, slot) in slots.iter().enumerate() {
                    let hit = match slot {
                        SlotVal::V(set) => set.iter().any(|&v| g.graph.node_has_label(v, l)),
                        SlotVal::E(set) => {
                            set.iter().any(|&(u, v)| g.graph.edge_has_label(u, v, l))
                        }
                    };
                    if hit {
                        row |= 1 << i;
                    }
                }
                row
            })
            .collect();

        Tp0 { tau: tau as u8, term_adj, traces, adj, inc, sub, labels }
    }

    /// Interns a node, enforcing the budget and the freeze contract.
    fn intern(&self, inner: &mut Inner, node: TypeNode) -> Result<u32, AlgebraError> {
        if let Some(&id) = inner.ids.get(&node) {
            return Ok(id);
        }
        if inner.frozen {
            panic!(
                "predicate `{}` is frozen but a new type appeared; saturation was incomplete",
                self.name
            );
        }
        if inner.nodes.len() + 1 > self.budget {
            return Err(AlgebraError::Budget { count: inner.nodes.len() + 1, cap: self.budget });
        }
        let id = inner.nodes.len() as u32;
        inner.nodes.push(node.clone());
        inner.ids.insert(node, id);
        Ok(id)
    }

    /// Classifies by direct enumeration of the remaining quantifier levels.
    fn type_of(
        &self,
        inner: &mut Inner,
        g: &WTerminalGraph,
        slots: &mut Vec<SlotVal>,
    ) -> Result<u32, AlgebraError> {
        let base = self.tp0_of(g, slots);
        let level = slots.len() - self.p();
        let mut ext_v = Vec::new();
        let mut ext_e = Vec::new();
        if level < self.rank {
            let plan = self.plans[level];
            if plan.need_v {
                let verts: Vec<NodeId> = g.graph.nodes().collect();
                if plan.cap_v {
                    for choice in 0..=verts.len() {
                        let set = if choice == 0 {
                            BTreeSet::new()
                        } else {
                            BTreeSet::from([verts[choice - 1]])
                        };
                        slots.push(SlotVal::V(set));
                        let id = self.type_of(inner, g, slots)?;
                        slots.pop();
                        ext_v.push(id);
                    }
                } else {
                    for mask in 0u64..1 << verts.len() {
                        let set = verts
                            .iter()
                            .enumerate()
                            .filter(|&(i, _)| mask >> i & 1 == 1)
                            .map(|(_, &v)| v)
                            .collect();
                        slots.push(SlotVal::V(set));
                        let id = self.type_of(inner, g, slots)?;
                        slots.pop();
                        ext_v.push(id);
                    }
                }
                ext_v.sort_unstable();
                ext_v.dedup();
            }
            if plan.need_e {
                let edges: Vec<(NodeId, NodeId)> = g.graph.edges().collect();
                if plan.cap_e {
                    for choice in 0..=edges.len() {
                        let set = if choice == 0 {
                            BTreeSet::new()
                        } else {
                            BTreeSet::from([edges[choice - 1]])
                        };
                        slots.push(SlotVal::E(set));
                        let id = self.type_of(inner, g, slots)?;
                        slots.pop();
                        ext_e.push(id);
                    }
                } else {
                    for mask in 0u64..1 << edges.len() {
                        let set = edges
                            .iter()
                            .enumerate()
                            .filter(|&(i, _)| mask >> i & 1 == 1)
                            .map(|(_, &e)| e)
                            .collect();
                        slots.push(SlotVal::E(set));
                        let id = self.type_of(inner, g, slots)?;
                        slots.pop();
                        ext_e.push(id);
                    }
                }
                ext_e.sort_unstable();
                ext_e.dedup();
            }
        }
        self.intern(inner, TypeNode { base, ext_v, ext_e })
    }

    /// Merges two quantifier-free parts along the matrix; `None` means no
    /// glued graph realizes the pair (traces disagree on an identified
    /// terminal or shared edge).
    fn merge_tp0(
        &self,
        t1: &Tp0,
        t2: &Tp0,
        m: &GlueMatrix,
        keep1: &[Option<usize>],
        keep2: &[Option<usize>],
    ) -> Option<Tp0> {
        debug_assert_eq!(t1.traces.len(), t2.traces.len());
        let tau = m.result_tau();
        let identified: Vec<(usize, usize)> = m
            .rows()
            .iter()
            .filter(|&&(a, b)| a > 0 && b > 0)
            .map(|&(a, b)| (a as usize - 1, b as usize - 1))
            .collect();

        let adj1 = remap_pairs(t1.term_adj, t1.tau as usize, keep1);
        let adj2 = remap_pairs(t2.term_adj, t2.tau as usize, keep2);
        let shared_edges = adj1 & adj2;
        let term_adj = adj1 | adj2;

        let mut traces = Vec::with_capacity(t1.traces.len());
        for (a, b) in t1.traces.iter().zip(&t2.traces) {
            debug_assert_eq!(a.sort, b.sort);
            match a.sort {
                SetSort::Vertices => {
                    for &(i1, i2) in &identified {
                        if (a.vmask >> i1 & 1) != (b.vmask >> i2 & 1) {
                            return None;
                        }
                    }
                    let interior = (u32::from(a.interior)
                        + u32::from(b.interior)
                        + dropped_bits(a.vmask, keep1)
                        + dropped_bits(b.vmask, keep2))
                    .min(2) as u8;
                    traces.push(VarTrace {
                        sort: SetSort::Vertices,
                        vmask: remap_bits(a.vmask, keep1) | remap_bits(b.vmask, keep2),
                        emask: 0,
                        interior,
                    });
                }
                SetSort::Edges => {
                    let e1 = remap_pairs(a.emask, t1.tau as usize, keep1);
                    let e2 = remap_pairs(b.emask, t2.tau as usize, keep2);
                    // on a shared edge both parts see the same edge, so
                    // membership must agree
                    if (e1 ^ e2) & shared_edges != 0 {
                        return None;
                    }
                    let interior = (u32::from(a.interior)
                        + u32::from(b.interior)
                        + dropped_pairs(a.emask, t1.tau as usize, keep1)
                        + dropped_pairs(b.emask, t2.tau as usize, keep2))
                    .min(2) as u8;
                    traces.push(VarTrace {
                        sort: SetSort::Edges,
                        vmask: 0,
                        emask: e1 | e2,
                        interior,
                    });
                }
            }
        }

        Some(Tp0 {
            tau: tau as u8,
            term_adj,
            traces,
            // every edge of the glued graph lies within one part, and
            // restrictions of a set agree with the set on that part, so
            // existential atom rows are unions; containment holds iff it
            // holds on both parts
            adj: t1.adj | t2.adj,
            inc: t1.inc | t2.inc,
            sub: t1.sub & t2.sub,
            labels: t1
                .labels
                .iter()
                .zip(&t2.labels)
                .map(|(x, y)| x | y)
                .collect(),
        })
    }

    /// Composes two interned types; `None` propagates trace
    /// incompatibility (and, below the top level, capped-level pruning).
    fn compose_ids(
        &self,
        inner: &mut Inner,
        c1: u32,
        c2: u32,
        m: &GlueMatrix,
        keep1: &[Option<usize>],
        keep2: &[Option<usize>],
    ) -> Result<Option<u32>, AlgebraError> {
        let memo_key = (c1, c2, m.clone());
        if let Some(hit) = inner.compose_memo.get(&memo_key) {
            return Ok(*hit);
        }
        let n1 = inner.nodes[c1 as usize].clone();
        let n2 = inner.nodes[c2 as usize].clone();

        let result = 'merge: {
            let Some(base) = self.merge_tp0(&n1.base, &n2.base, m, keep1, keep2) else {
                break 'merge None;
            };
            // a capped level only materializes sets of size ≤ 1
            if base.traces.len() > self.p() {
                let level = base.traces.len() - self.p() - 1;
                let last = base.traces.last().expect("nonempty by the check above");
                if self.plans[level].capped(last.sort) && last.capped_card() >= 2 {
                    break 'merge None;
                }
            }
            let level = base.traces.len() - self.p();
            let mut ext_v = Vec::new();
            let mut ext_e = Vec::new();
            if level < self.rank {
                for &a in &n1.ext_v {
                    for &b in &n2.ext_v {
                        if let Some(id) = self.compose_ids(inner, a, b, m, keep1, keep2)? {
                            ext_v.push(id);
                        }
                    }
                }
                ext_v.sort_unstable();
                ext_v.dedup();
                for &a in &n1.ext_e {
                    for &b in &n2.ext_e {
                        if let Some(id) = self.compose_ids(inner, a, b, m, keep1, keep2)? {
                            ext_e.push(id);
                        }
                    }
                }
                ext_e.sort_unstable();
                ext_e.dedup();
            }
            Some(self.intern(inner, TypeNode { base, ext_v, ext_e })?)
        };

        inner.compose_memo.insert(memo_key, result);
        Ok(result)
    }

    /// Evaluates the normalized body over an interned type.
    fn eval_body(
        &self,
        inner: &Inner,
        id: u32,
        env: &mut Vec<(String, usize)>,
        body: &Body,
    ) -> bool {
        let slot_of = |env: &[(String, usize)], name: &str| -> usize {
            env.iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|&(_, s)| s)
                .expect("formula validation binds every variable")
        };
        match body {
            Body::Atom(atom) => {
                let node = &inner.nodes[id as usize];
                match atom {
                    Atom::AdjSet(x, y) => {
                        bit(node.base.adj, slot_pair(slot_of(env, x), slot_of(env, y)))
                    }
                    Atom::IncSet(x, f) => {
                        bit(node.base.inc, slot_pair(slot_of(env, x), slot_of(env, f)))
                    }
                    Atom::Sub(x, y) => {
                        bit(node.base.sub, slot_pair(slot_of(env, x), slot_of(env, y)))
                    }
                    Atom::Sing(x) => node.base.traces[slot_of(env, x)].capped_card() == 1,
                    Atom::LabelSet(l, x) => {
                        let li = self
                            .vocab
                            .binary_search(l)
                            .expect("vocabulary covers every mentioned label");
                        node.base.labels[li] >> slot_of(env, x) & 1 == 1
                    }
                    Atom::Adj(..)
                    | Atom::Inc(..)
                    | Atom::Eq(..)
                    | Atom::In(..)
                    | Atom::Label(..) => {
                        unreachable!("normalized bodies contain no first-order atoms")
                    }
                }
            }
            Body::Not(b) => !self.eval_body(inner, id, env, b),
            Body::And(l, r) => {
                self.eval_body(inner, id, env, l) && self.eval_body(inner, id, env, r)
            }
            Body::Or(l, r) => {
                self.eval_body(inner, id, env, l) || self.eval_body(inner, id, env, r)
            }
            Body::Exists(sort, var, b) => {
                let node = &inner.nodes[id as usize];
                let slot = node.base.traces.len();
                let children = match SetSort::from_sort(*sort)
                    .expect("normalized quantifiers are set-sorted")
                {
                    SetSort::Vertices => node.ext_v.clone(),
                    SetSort::Edges => node.ext_e.clone(),
                };
                env.push((var.clone(), slot));
                let found = children.iter().any(|&c| self.eval_body(inner, c, env, b));
                env.pop();
                found
            }
            Body::Implies(..) | Body::Forall(..) => {
                unreachable!("normalized bodies contain no implications or universal quantifiers")
            }
        }
    }

    fn node_level_checked(&self, inner: &Inner, c: ClassId) -> Result<(), AlgebraError> {
        let node = inner
            .nodes
            .get(c.0 as usize)
            .ok_or(AlgebraError::UnknownClass(c.0))?;
        if node.base.traces.len() != self.p() {
            // extension ids are internal; only top-level types are classes
            return Err(AlgebraError::UnknownClass(c.0));
        }
        Ok(())
    }
}

impl RegularPredicate for CompiledPredicate {
    fn name(&self) -> &str {
        &self.name
    }

    fn width(&self) -> usize {
        self.width
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn label_vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn class_count(&self) -> usize {
        self.inner.lock().expect("interner lock").nodes.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        if g.tau() > self.width {
            return Err(AlgebraError::WidthExceeded { got: g.tau(), max: self.width });
        }
        let mut slots = self.free_slots(g)?;
        let inner = &mut *self.inner.lock().expect("interner lock");

        let base_key = g.is_base().then(|| {
            let tp0 = self.tp0_of(g, &slots);
            BaseKey {
                tau: tp0.tau,
                term_adj: tp0.term_adj,
                vlabels: self
                    .vocab
                    .iter()
                    .map(|l| {
                        let mut mask = 0u32;
                        for (r, &t) in g.terminals().iter().enumerate() {
                            if g.graph.node_has_label(t, l) {
                                mask |= 1 << r;
                            }
                        }
                        mask
                    })
                    .collect(),
                elabels: self
                    .vocab
                    .iter()
                    .map(|l| {
                        let mut mask = 0u128;
                        let terms = g.terminals();
                        for r in 0..terms.len() {
                            for s in r + 1..terms.len() {
                                if g.graph.has_edge(terms[r], terms[s])
                                    && g.graph.edge_has_label(terms[r], terms[s], l)
                                {
                                    mask |= 1 << term_pair(r, s);
                                }
                            }
                        }
                        mask
                    })
                    .collect(),
                free: tp0.traces,
            }
        });
        if let Some(key) = &base_key {
            if let Some(&id) = inner.base_memo.get(key) {
                return Ok(ClassId(id));
            }
        }

        let work = self.enum_work(g.graph.n(), g.graph.m(), 0);
        if work > MAX_ENUM_WORK {
            return Err(AlgebraError::SizeLimit(format!(
                "classifying a graph with {} vertices and {} edges would enumerate ~2^{:.0} stacks",
                g.graph.n(),
                g.graph.m(),
                (work as f64).log2()
            )));
        }

        let id = self.type_of(inner, g, &mut slots)?;
        if let Some(key) = base_key {
            inner.base_memo.insert(key, id);
        }
        Ok(ClassId(id))
    }

    fn compose(
        &self,
        c1: ClassId,
        c2: ClassId,
        m: &GlueMatrix,
    ) -> Result<ClassId, AlgebraError> {
        let inner = &mut *self.inner.lock().expect("interner lock");
        self.node_level_checked(inner, c1)?;
        self.node_level_checked(inner, c2)?;
        let tau1 = inner.nodes[c1.0 as usize].base.tau as usize;
        let tau2 = inner.nodes[c2.0 as usize].base.tau as usize;
        m.check_taus(tau1, tau2)?;
        if m.result_tau() > self.width {
            return Err(AlgebraError::WidthExceeded { got: m.result_tau(), max: self.width });
        }
        let (keep1, keep2) = m.kept_maps(tau1, tau2);
        match self.compose_ids(inner, c1.0, c2.0, m, &keep1, &keep2)? {
            Some(id) => Ok(ClassId(id)),
            None => Err(AlgebraError::IncompatibleAssignment(
                "the classes' traces disagree on an identified terminal or shared edge".into(),
            )),
        }
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        let inner = &*self.inner.lock().expect("interner lock");
        self.node_level_checked(inner, c)?;
        let mut env: Vec<(String, usize)> = self
            .free
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.clone(), i))
            .collect();
        Ok(self.eval_body(inner, c.0, &mut env, self.formula.body()))
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let inner = &*self.inner.lock().expect("interner lock");
        self.node_level_checked(inner, c)?;
        let node = &inner.nodes[c.0 as usize];
        if bag.len() != node.base.tau as usize {
            return Err(AlgebraError::BadTerminals(format!(
                "bag has {} vertices but the class has {} terminals",
                bag.len(),
                node.base.tau
            )));
        }
        let mut out = Vec::with_capacity(self.p());
        for trace in &node.base.traces[..self.p()] {
            out.push(match trace.sort {
                SetSort::Vertices => SelectedSet::Vertices(
                    (0..bag.len())
                        .filter(|&r| trace.vmask >> r & 1 == 1)
                        .map(|r| bag[r])
                        .collect(),
                ),
                SetSort::Edges => {
                    let mut set = BTreeSet::new();
                    for r in 0..bag.len() {
                        for s in r + 1..bag.len() {
                            if bit(trace.emask, term_pair(r, s)) {
                                set.insert(ekey(bag[r], bag[s]));
                            }
                        }
                    }
                    SelectedSet::Edges(set)
                }
            });
        }
        Ok(out)
    }

    fn set_frozen(&self, frozen: bool) {
        self.inner.lock().expect("interner lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        use std::fmt::Write as _;
        let inner = &*self.inner.lock().expect("interner lock");
        let mut out = String::new();
        writeln!(out, "predicate {}", self.name).unwrap();
        writeln!(
            out,
            "width {} rank {} free {} classes {}",
            self.width,
            self.rank,
            self.p(),
            inner.nodes.len()
        )
        .unwrap();
        let top: Vec<u32> = (0..inner.nodes.len() as u32)
            .filter(|&id| inner.nodes[id as usize].base.traces.len() == self.p())
            .collect();
        let accepting: Vec<u32> = top
            .iter()
            .copied()
            .filter(|&id| {
                let mut env: Vec<(String, usize)> = self
                    .free
                    .iter()
                    .enumerate()
                    .map(|(i, (name, _))| (name.clone(), i))
                    .collect();
                self.eval_body(inner, id, &mut env, self.formula.body())
            })
            .collect();
        writeln!(out, "top-level {} accepting {:?}", top.len(), accepting).unwrap();
        for &id in top.iter().take(24) {
            let node = &inner.nodes[id as usize];
            writeln!(
                out,
                "class {id}: tau={} term_adj={:#x} traces={} ext_v={} ext_e={}",
                node.base.tau,
                node.base.term_adj,
                node.base.traces.len(),
                node.ext_v.len(),
                node.ext_e.len()
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::glue::{glue, WTerminalGraph};
    use crate::graph::Graph;
    use crate::mso::{library, parse_formula, Assignment};

    fn base(edges: &[(u32, u32)], n: u32) -> WTerminalGraph {
        let g = Graph::from_edges(1..=n, edges.iter().copied()).unwrap();
        WTerminalGraph::base(g).unwrap()
    }

    #[test]
    fn classify_and_accept_matches_simple_facts() {
        let p = compile_mso(&library::triangle_free(), 4).unwrap();
        let k3 = base(&[(1, 2), (2, 3), (1, 3)], 3);
        let p3 = base(&[(1, 2), (2, 3)], 3);
        let c_k3 = p.classify_base(&k3).unwrap();
        let c_p3 = p.classify_base(&p3).unwrap();
        assert!(!p.is_accepting(c_k3).unwrap());
        assert!(p.is_accepting(c_p3).unwrap());
        assert_ne!(c_k3, c_p3);
    }

    #[test]
    fn isomorphic_base_graphs_share_a_class() {
        let p = compile_mso(&library::triangle_free(), 4).unwrap();
        // same ordered adjacency pattern on different vertex ids
        let a = base(&[(1, 2), (2, 3)], 3);
        let g = Graph::from_edges([10, 20, 30], [(10, 20), (20, 30)]).unwrap();
        let b = WTerminalGraph::base(g).unwrap();
        assert_eq!(p.classify_base(&a).unwrap(), p.classify_base(&b).unwrap());
    }

    #[test]
    fn composition_agrees_with_direct_classification() {
        // P_4 = (1-2-3) glued with (3-4) on terminal 3, middle dropped
        let p = compile_mso(&library::acyclic(), 4).unwrap();
        let left = base(&[(1, 2), (2, 3)], 3);
        let right = {
            let g = Graph::from_edges([3, 4], [(3, 4)]).unwrap();
            WTerminalGraph::base(g).unwrap()
        };
        let m = GlueMatrix::new(vec![(1, 0), (3, 1), (0, 2)]).unwrap();
        let glued = glue(&left, &right, &m).unwrap();
        let composed = p
            .compose(
                p.classify_base(&left).unwrap(),
                p.classify_base(&right).unwrap(),
                &m,
            )
            .unwrap();
        let direct = p.classify_base(&glued).unwrap();
        assert_eq!(composed, direct);
        assert!(p.is_accepting(direct).unwrap());
    }

    #[test]
    fn free_variables_flow_through_assignments() {
        let p = compile_mso(&library::independent_set(), 4).unwrap();
        let g = Graph::from_edges(1..=3, [(1, 2), (2, 3)]).unwrap();
        let pick = |vs: &[u32]| {
            let a = Assignment::new().set(
                "S",
                crate::mso::Value::VertexSet(vs.iter().map(|&v| NodeId(v)).collect()),
            );
            WTerminalGraph::base(g.clone()).unwrap().with_assignment(a)
        };
        let c_ok = p.classify_base(&pick(&[1, 3])).unwrap();
        let c_bad = p.classify_base(&pick(&[1, 2])).unwrap();
        assert!(p.is_accepting(c_ok).unwrap());
        assert!(!p.is_accepting(c_bad).unwrap());
        let sel = p.selected(c_ok, &[NodeId(1), NodeId(2), NodeId(3)]).unwrap();
        assert_eq!(
            sel,
            vec![SelectedSet::Vertices([NodeId(1), NodeId(3)].into())]
        );
    }

    #[test]
    fn missing_assignment_is_reported() {
        let p = compile_mso(&library::independent_set(), 4).unwrap();
        let g = base(&[(1, 2)], 2);
        assert!(matches!(
            p.classify_base(&g),
            Err(AlgebraError::IncompatibleAssignment(_))
        ));
    }

    #[test]
    fn tiny_budgets_error_out() {
        let p = compile_mso_with_budget(&library::triangle_free(), 4, 3).unwrap();
        let k3 = base(&[(1, 2), (2, 3), (1, 3)], 3);
        assert!(matches!(
            p.classify_base(&k3),
            Err(AlgebraError::Budget { cap: 3, .. })
        ));
    }

    #[test]
    #[should_panic(expected = "frozen")]
    fn freezing_panics_on_new_types() {
        let p = compile_mso(&library::triangle_free(), 4).unwrap();
        p.classify_base(&base(&[(1, 2)], 2)).unwrap();
        p.set_frozen(true);
        // a base graph with a different boundary pattern needs a new type
        let _ = p.classify_base(&base(&[(1, 2), (2, 3), (1, 3)], 3));
    }

    #[test]
    fn labels_participate_in_types() {
        let f = parse_formula("exists_v x. label(red, x)").unwrap();
        let p = compile_mso(&f, 3).unwrap();
        let mut g = Graph::from_edges(1..=2, [(1, 2)]).unwrap();
        let plain = p
            .classify_base(&WTerminalGraph::base(g.clone()).unwrap())
            .unwrap();
        g.add_node_label(NodeId(2), "red").unwrap();
        let marked = p.classify_base(&WTerminalGraph::base(g).unwrap()).unwrap();
        assert!(!p.is_accepting(plain).unwrap());
        assert!(p.is_accepting(marked).unwrap());
    }

    #[test]
    fn oversized_enumerations_are_rejected() {
        let f = parse_formula(
            "exists_vs A. exists_vs B. exists_vs C. exists_vs D. sub(A, B)",
        )
        .unwrap();
        let p = compile_mso(&f, 16).unwrap();
        let g = Graph::from_edges(1..=16, (1..16).map(|i| (i, i + 1))).unwrap();
        assert!(matches!(
            p.classify_base(&WTerminalGraph::base(g).unwrap()),
            Err(AlgebraError::SizeLimit(_))
        ));
    }
}
