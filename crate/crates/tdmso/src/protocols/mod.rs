//! Distributed protocols over the simulated network: building an
//! elimination tree, distributing bags, and running the decide, optimize,
//! count, and marked-optimality sweeps with narrow messages.
//!
//! Every protocol here follows the same recipe. Nodes know nothing but
//! their own id, weight, labels, and ports; everything else — who their
//! neighbors are, where they sit in the tree, what their bag contains —
//! arrives in messages whose per-round size the simulator caps. A run is a
//! fixed round schedule computed identically by every node from globally
//! known quantities (the vertex count, the depth budget, the frozen
//! algebra's class count), so no control traffic is spent on phase
//! changes.
//!
//! The drivers in this module wrap [`crate::sim::run`]:
//!
//! - [`build_elimination_tree`] grows an elimination tree of depth at most
//!   `2^d` or reports [`ElimResult::LargeTreedepth`]; the failure report is
//!   exact for graphs of treedepth at most `d`, which always build.
//! - [`distribute_bags`] hands every vertex its bag — its ancestors in a
//!   given elimination forest — together with the subgraph induced on it.
//! - [`distributed_decide`], [`distributed_optimize`],
//!   [`distributed_count`], and [`distributed_optmarked`] run the same
//!   folds as [`crate::dp`] bottom-up along the tree. The decision sweep
//!   sends exactly `ceil(log2 |C|)` bits per tree edge, where `C` is the
//!   predicate's class family.
//!
//! Before a fold runs, the driver executes its sequential counterpart once
//! to saturate the predicate's class tables, then freezes them
//! ([`crate::algebra::RegularPredicate::set_frozen`]): the distributed run
//! can only look up classes the sequential semantics already named, so the
//! two cannot drift apart silently.

mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use serde::Serialize;

use crate::algebra::{compile_mso, RegularPredicate, SelectedSet, SetSort};
use crate::dp::{self, selected_value, union_selected, DpError};
use crate::graph::{
    canonical_decomposition, check_elimination_forest, EliminationForest, Graph, NodeId,
    TreeDecomposition,
};
use crate::mso::{Assignment, MsoFormula};
use crate::sim::{self, round_budget, RoundTrace, SimError};

use pipeline::{ceil_log2, Config, LocalSeed, Mission, NodeOutput, Pipeline, PortAttr, Schedule, Tail};

/// Smallest accepted bandwidth multiplier: at `64 * bitlen(n-1)` bits per
/// round, every fixed-format message (floods, claims, roll-ups, verdicts)
/// fits a single round.
pub const MIN_BUDGET_FACTOR: u32 = 64;

/// Largest accepted depth budget; schedules grow as `4^d` rounds, and the
/// round counter is 32 bits.
pub const MAX_DEPTH_BUDGET: u32 = 12;

/// Errors of the distributed drivers.
#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    /// The simulator rejected the run (disconnected graph, bandwidth or
    /// round-limit violation).
    #[error(transparent)]
    Sim(#[from] SimError),
    /// The sequential saturation pass failed.
    #[error(transparent)]
    Dp(#[from] DpError),
    /// No assignment satisfies the property on this graph.
    #[error("no assignment satisfies the property on this graph")]
    Unsatisfiable,
    #[error("bad input: {0}")]
    BadInput(String),
    /// A node reported a broken invariant — a bug, not an input problem.
    #[error("protocol failure: {0}")]
    Node(String),
}

/// What one vertex knows after [`build_elimination_tree`] succeeds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElimTreeState {
    /// Whether the vertex joined the tree (always true in a success).
    pub marked: bool,
    /// The parent's id; `None` at the root.
    pub parent: Option<NodeId>,
    /// Ids of the children, ascending.
    pub children: Vec<NodeId>,
    /// Distance from the root plus one; the root has depth 1.
    pub depth: u32,
    /// The component leader this vertex last heard — its own id once it
    /// roots a tree, otherwise the minimum id of its component when it was
    /// claimed.
    pub leader: NodeId,
    /// The depth of the whole tree, learned from the verdict broadcast.
    pub tree_depth: u32,
}

/// What one vertex knows after [`distribute_bags`]: its bag (itself plus
/// its ancestors, ascending) and the edges of the graph induced on the
/// bag, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagState {
    pub bag: Vec<NodeId>,
    pub edges: Vec<(NodeId, NodeId)>,
}

/// Outcome of [`build_elimination_tree`].
#[derive(Clone, Debug)]
pub enum ElimResult {
    /// Every vertex joined one tree satisfying the elimination condition.
    Tree {
        states: BTreeMap<NodeId, ElimTreeState>,
        forest: EliminationForest,
        tree_depth: u32,
    },
    /// All vertices reported that no tree of depth `2^d` was built. For
    /// inputs of treedepth at most `d` this never happens.
    LargeTreedepth,
}

/// Outcome of a distributed fold: either the mission's result or the
/// unanimous report that the depth budget did not suffice.
#[derive(Clone, Debug)]
pub enum Distributed<T> {
    Done(T),
    LargeTreedepth { trace: RoundTrace },
}

impl<T> Distributed<T> {
    /// The mission result, if the tree was built.
    pub fn done(self) -> Option<T> {
        match self {
            Distributed::Done(t) => Some(t),
            Distributed::LargeTreedepth { .. } => None,
        }
    }
}

/// Round and bandwidth accounting of one distributed fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolReport {
    /// Rounds until the last vertex halted.
    pub rounds_total: u32,
    /// Rounds spent building and validating the elimination tree.
    pub rounds_elim_tree: u32,
    /// Rounds spent shipping bags down the tree.
    pub rounds_bags: u32,
    /// Rounds of the bottom-up sweep (the tree depth for plain deciding).
    pub rounds_bottom_up: u32,
    /// Rounds of the top-down unwind (optimization only).
    pub rounds_top_down: u32,
    /// Widest message actually sent, in bits.
    pub max_message_bits: usize,
    /// The per-edge round budget the run was held to.
    pub budget_bits: usize,
    /// Classes of the frozen algebra.
    pub class_count: usize,
    /// Bits per class id: `ceil(log2(class_count))`.
    pub class_bits: usize,
    /// First and last send round of the bottom-up sweep, when it spans
    /// more than the root's own round.
    pub bottom_up_span: Option<(u32, u32)>,
    /// Depth of the elimination tree the fold ran on.
    pub tree_depth: u32,
}

/// Result of [`distributed_decide`].
#[derive(Clone, Debug)]
pub struct DecideRun {
    /// The root's verdict.
    pub accept: bool,
    /// Every vertex's verdict; non-roots always accept.
    pub per_node: BTreeMap<NodeId, bool>,
    pub trace: RoundTrace,
    pub report: ProtocolReport,
}

/// Result of [`distributed_optimize`].
#[derive(Clone, Debug)]
pub struct OptimizeRun {
    /// The extremal weight, known at the root.
    pub value: i64,
    /// The union of the per-vertex fragments — one optimal selection.
    pub witness: SelectedSet,
    /// Each vertex's own piece of the selection: itself if selected (vertex
    /// problems) or its selected incident leaf edges (edge problems).
    pub fragments: BTreeMap<NodeId, SelectedSet>,
    pub trace: RoundTrace,
    pub report: ProtocolReport,
}

/// Result of [`distributed_count`].
#[derive(Clone, Debug)]
pub struct CountRun {
    /// The exact number of satisfying assignments, computed at the root.
    pub total: BigUint,
    pub trace: RoundTrace,
    pub report: ProtocolReport,
}

/// Result of [`distributed_optmarked`].
#[derive(Clone, Debug)]
pub struct MarkedRun {
    /// The root's verdict: the marked elements satisfy the property and
    /// their weight equals the optimum.
    pub accept: bool,
    /// Every vertex's verdict; non-roots always accept.
    pub per_node: BTreeMap<NodeId, bool>,
    pub trace: RoundTrace,
    pub report: ProtocolReport,
}

/// Freezes a predicate's class tables for the duration of a scope,
/// unfreezing on drop even if the scope panics.
struct FreezeGuard<'a> {
    p: &'a dyn RegularPredicate,
}

impl<'a> FreezeGuard<'a> {
    fn new(p: &'a dyn RegularPredicate) -> FreezeGuard<'a> {
        p.set_frozen(true);
        FreezeGuard { p }
    }
}

impl Drop for FreezeGuard<'_> {
    fn drop(&mut self) {
        self.p.set_frozen(false);
    }
}

fn validate(g: &Graph, d: u32, budget_factor: u32) -> Result<(), ProtocolError> {
    if g.n() == 0 {
        return Err(ProtocolError::BadInput("the graph has no vertices".to_owned()));
    }
    if !(1..=MAX_DEPTH_BUDGET).contains(&d) {
        return Err(ProtocolError::BadInput(format!(
            "depth budget {d} outside 1..={MAX_DEPTH_BUDGET}"
        )));
    }
    if budget_factor < MIN_BUDGET_FACTOR {
        return Err(ProtocolError::BadInput(format!(
            "budget factor {budget_factor} below the minimum {MIN_BUDGET_FACTOR}"
        )));
    }
    Ok(())
}

/// Bakes one node program per vertex (id, weight, label mask, per-port
/// edge attributes, optional forest seed) and runs the network.
fn run_pipeline(
    g: &Graph,
    cfg: &Config<'_>,
    seeds: Option<&BTreeMap<NodeId, LocalSeed>>,
    budget_factor: u32,
    max_rounds: u32,
) -> Result<(BTreeMap<NodeId, NodeOutput>, RoundTrace), ProtocolError> {
    let make = |v: NodeId| {
        let mut mask = 0u64;
        for (bit, label) in cfg.vocab.iter().enumerate() {
            if g.node_has_label(v, label) {
                mask |= 1 << bit;
            }
        }
        let mut nbrs: Vec<NodeId> = g.neighbors(v).collect();
        nbrs.sort_unstable();
        let attrs = nbrs
            .into_iter()
            .map(|w| {
                let mut emask = 0u64;
                for (bit, label) in cfg.vocab.iter().enumerate() {
                    if g.edge_has_label(v, w, label) {
                        emask |= 1 << bit;
                    }
                }
                PortAttr { weight: g.edge_weight(v, w), mask: emask }
            })
            .collect();
        let seed = seeds.and_then(|s| s.get(&v).cloned());
        Pipeline::new(cfg.clone(), v, g.node_weight(v), mask, attrs, seed)
    };
    let (outputs, trace) = sim::run(g, make, budget_factor, max_rounds)?;
    for (v, out) in &outputs {
        if let NodeOutput::Failed(message) = out {
            return Err(ProtocolError::Node(format!("node {v}: {message}")));
        }
    }
    Ok((outputs, trace))
}

/// Grows an elimination tree of depth at most `2^d` with every vertex
/// starting from nothing but its ports, or reports that no such tree was
/// completed.
///
/// The tree grows one depth level per step: min-id floods elect a leader
/// in every component of the unclaimed vertices, and the unique deepest
/// tree vertex adjacent to a component adopts that component's smallest
/// announcing member. A validation phase then checks the result — leftover
/// vertices raise alarms, every tree edge must connect an
/// ancestor–descendant pair — and broadcasts the root's verdict, so all
/// vertices agree on the outcome. Graphs of treedepth at most `d` always
/// build a tree; the run finishes within `10 * 4^d` rounds either way.
pub fn build_elimination_tree(
    g: &Graph,
    d: u32,
    budget_factor: u32,
) -> Result<(ElimResult, RoundTrace), ProtocolError> {
    validate(g, d, budget_factor)?;
    let budget = round_budget(g.n(), budget_factor);
    let sched = Schedule::new(d, budget);
    let cfg = Config {
        mission: Mission::Elim,
        sched,
        tail: None,
        p: None,
        vocab: Vec::new(),
        mark_bit: None,
        sign: 1,
        free: Vec::new(),
        class_count: 1,
        count_bits: 0,
    };
    let (outputs, trace) = run_pipeline(g, &cfg, None, budget_factor, sched.round_limit())?;
    let mut states = BTreeMap::new();
    let mut large = 0usize;
    for (v, out) in outputs {
        match out {
            NodeOutput::Large => large += 1,
            NodeOutput::Elim(state) => {
                states.insert(v, state);
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    if large == g.n() {
        return Ok((ElimResult::LargeTreedepth, trace));
    }
    if large > 0 {
        return Err(ProtocolError::Node("vertices disagree on the depth verdict".to_owned()));
    }
    let parent: BTreeMap<NodeId, NodeId> =
        states.iter().map(|(&v, s)| (v, s.parent.unwrap_or(v))).collect();
    let forest =
        EliminationForest::from_parent(parent).map_err(|e| ProtocolError::Node(e.to_string()))?;
    if !check_elimination_forest(g, &forest) {
        return Err(ProtocolError::Node("the built tree violates the edge condition".to_owned()));
    }
    let tree_depth = forest.depth_of_forest();
    for (&v, state) in &states {
        if state.tree_depth != tree_depth || state.depth != forest.depth(v) {
            return Err(ProtocolError::Node(format!("node {v} holds inconsistent depths")));
        }
    }
    Ok((ElimResult::Tree { states, forest, tree_depth }, trace))
}

/// Ships every vertex its bag — itself plus its ancestors in `forest` —
/// and the edges induced on it, down the tree in one pipelined sweep.
///
/// The forest is this protocol's input: each vertex starts with its own
/// depth, parent id, and children ids, as [`build_elimination_tree`]
/// leaves behind. Beyond being a valid elimination forest for `g`, every
/// non-root's parent must be a neighbor, so tree edges are channels.
pub fn distribute_bags(
    g: &Graph,
    forest: &EliminationForest,
    budget_factor: u32,
) -> Result<(BTreeMap<NodeId, BagState>, RoundTrace), ProtocolError> {
    validate(g, 1, budget_factor)?;
    let spanned: BTreeSet<NodeId> = forest.parent_map().keys().copied().collect();
    let vertices: BTreeSet<NodeId> = g.nodes().collect();
    if spanned != vertices {
        return Err(ProtocolError::BadInput(
            "the forest does not span exactly this graph's vertices".to_owned(),
        ));
    }
    if !check_elimination_forest(g, forest) {
        return Err(ProtocolError::BadInput(
            "not an elimination forest for this graph".to_owned(),
        ));
    }
    for (&v, &p) in forest.parent_map() {
        if p != v && !g.has_edge(v, p) {
            return Err(ProtocolError::BadInput(format!(
                "parent {p} of vertex {v} is not a neighbor, so the tree edge has no channel"
            )));
        }
    }
    let budget = round_budget(g.n(), budget_factor);
    let tail = Tail::new(Mission::Bags, 1, forest.depth_of_forest(), budget, 0, 1, 0)
        .map_err(ProtocolError::BadInput)?;
    let cfg = Config {
        mission: Mission::Bags,
        sched: Schedule::new(1, budget),
        tail: Some(tail),
        p: None,
        vocab: Vec::new(),
        mark_bit: None,
        sign: 1,
        free: Vec::new(),
        class_count: 1,
        count_bits: 0,
    };
    let seeds: BTreeMap<NodeId, LocalSeed> = g
        .nodes()
        .map(|v| {
            (
                v,
                LocalSeed {
                    depth: forest.depth(v),
                    parent_id: forest.parent(v),
                    children_ids: forest.children(v).to_vec(),
                },
            )
        })
        .collect();
    let (outputs, trace) = run_pipeline(g, &cfg, Some(&seeds), budget_factor, tail.end + 2)?;
    let mut bags = BTreeMap::new();
    for (v, out) in outputs {
        match out {
            NodeOutput::Bags(state) => {
                bags.insert(v, state);
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    Ok((bags, trace))
}

/// A built tree readied for a fold: its canonical decomposition and depth.
enum Prep {
    Large(RoundTrace),
    Ready { td: TreeDecomposition, d_t: u32 },
}

fn prepare(g: &Graph, d: u32, budget_factor: u32) -> Result<Prep, ProtocolError> {
    let (result, trace) = build_elimination_tree(g, d, budget_factor)?;
    match result {
        ElimResult::LargeTreedepth => Ok(Prep::Large(trace)),
        ElimResult::Tree { forest, tree_depth, .. } => {
            let td = canonical_decomposition(g, &forest)
                .map_err(|e| ProtocolError::Node(e.to_string()))?;
            Ok(Prep::Ready { td, d_t: tree_depth })
        }
    }
}

/// Shared groundwork of the fold drivers: vocabulary and width checks plus
/// the phase schedules.
fn fold_setup(
    budget: usize,
    d: u32,
    mission: Mission,
    p: &dyn RegularPredicate,
    d_t: u32,
    vocab: &[String],
    count_bits: usize,
) -> Result<(Schedule, Tail), ProtocolError> {
    if vocab.len() > 64 {
        return Err(ProtocolError::BadInput(format!(
            "{} labels exceed the 64-bit label mask",
            vocab.len()
        )));
    }
    let class_count = p.class_count();
    if ceil_log2(class_count) + 1 > budget {
        return Err(ProtocolError::BadInput(format!(
            "{class_count} classes need more than the {budget}-bit round budget"
        )));
    }
    let sched = Schedule::new(d, budget);
    let tail = Tail::new(mission, sched.verdict_end, d_t, budget, vocab.len(), class_count, count_bits)
        .map_err(ProtocolError::BadInput)?;
    Ok((sched, tail))
}

fn report_for(sched: &Schedule, tail: Tail, trace: &RoundTrace, class_count: usize, top_down: bool) -> ProtocolReport {
    ProtocolReport {
        rounds_total: trace.rounds,
        rounds_elim_tree: sched.verdict_end,
        rounds_bags: tail.bags_end - sched.verdict_end,
        rounds_bottom_up: tail.root_done - tail.bags_end,
        rounds_top_down: if top_down { tail.end - tail.root_done + 1 } else { 0 },
        max_message_bits: trace.max_bits(),
        budget_bits: trace.budget_bits,
        class_count,
        class_bits: tail.cw,
        bottom_up_span: (tail.d_t >= 2).then_some((tail.bags_end + 1, tail.root_done - 1)),
        tree_depth: tail.d_t,
    }
}

/// The root of the canonical decomposition of a freshly built tree.
fn single_root(td: &TreeDecomposition) -> Result<NodeId, ProtocolError> {
    let mut roots = td.roots();
    let root = roots.next().ok_or(ProtocolError::Node("a tree without a root".to_owned()))?;
    if roots.next().is_some() {
        return Err(ProtocolError::Node("a connected run produced several roots".to_owned()));
    }
    Ok(root)
}

/// Decides a sentence on the network: builds the tree, ships bags, folds
/// classes bottom-up with messages of exactly `ceil(log2 |C|)` bits, and
/// has the root apply the acceptance test.
///
/// The predicate is saturated by one sequential [`dp::decide`] run and
/// frozen during the distributed execution.
pub fn distributed_decide(
    g: &Graph,
    d: u32,
    p: &dyn RegularPredicate,
    budget_factor: u32,
) -> Result<Distributed<DecideRun>, ProtocolError> {
    validate(g, d, budget_factor)?;
    let (td, d_t) = match prepare(g, d, budget_factor)? {
        Prep::Large(trace) => return Ok(Distributed::LargeTreedepth { trace }),
        Prep::Ready { td, d_t } => (td, d_t),
    };
    dp::decide(g, &td, p)?;
    let vocab = p.label_vocabulary().to_vec();
    let budget = round_budget(g.n(), budget_factor);
    let (sched, tail) = fold_setup(budget, d, Mission::Decide, p, d_t, &vocab, 0)?;
    let class_count = p.class_count();
    let cfg = Config {
        mission: Mission::Decide,
        sched,
        tail: None,
        p: Some(p),
        vocab,
        mark_bit: None,
        sign: 1,
        free: Vec::new(),
        class_count,
        count_bits: 0,
    };
    let guard = FreezeGuard::new(p);
    let (outputs, trace) = run_pipeline(g, &cfg, None, budget_factor, tail.end + 2)?;
    drop(guard);
    let root = single_root(&td)?;
    let mut per_node = BTreeMap::new();
    for (v, out) in outputs {
        match out {
            NodeOutput::Decide { accept } => {
                per_node.insert(v, accept);
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    let accept =
        *per_node.get(&root).ok_or(ProtocolError::Node("the root produced no output".to_owned()))?;
    let report = report_for(&sched, tail, &trace, class_count, false);
    Ok(Distributed::Done(DecideRun { accept, per_node, trace, report }))
}

/// Optimizes a property with one free set variable on the network: after
/// the bottom-up fold of weighted class tables, the root unwinds the best
/// accepting class top-down, leaving every vertex its fragment of one
/// optimal selection.
///
/// Errors with [`ProtocolError::Unsatisfiable`] when no selection
/// satisfies the property.
pub fn distributed_optimize(
    g: &Graph,
    d: u32,
    p: &dyn RegularPredicate,
    maximize: bool,
    budget_factor: u32,
) -> Result<Distributed<OptimizeRun>, ProtocolError> {
    validate(g, d, budget_factor)?;
    let (td, d_t) = match prepare(g, d, budget_factor)? {
        Prep::Large(trace) => return Ok(Distributed::LargeTreedepth { trace }),
        Prep::Ready { td, d_t } => (td, d_t),
    };
    let [(_, sort)] = p.free_vars() else {
        return Err(ProtocolError::BadInput(format!(
            "optimization needs exactly one free set variable, `{}` has {}",
            p.name(),
            p.free_vars().len()
        )));
    };
    let sort = *sort;
    // Saturate every table the distributed fold can touch; an
    // unsatisfiable instance still saturates, and the network discovers
    // the outcome itself.
    match dp::optimize(g, &td, p, maximize) {
        Ok(_) | Err(DpError::Unsatisfiable) => {}
        Err(e) => return Err(e.into()),
    }
    let vocab = p.label_vocabulary().to_vec();
    let budget = round_budget(g.n(), budget_factor);
    let (sched, tail) = fold_setup(budget, d, Mission::Optimize, p, d_t, &vocab, 0)?;
    let class_count = p.class_count();
    let cfg = Config {
        mission: Mission::Optimize,
        sched,
        tail: None,
        p: Some(p),
        vocab,
        mark_bit: None,
        sign: if maximize { 1 } else { -1 },
        free: p.free_vars().to_vec(),
        class_count,
        count_bits: 0,
    };
    let guard = FreezeGuard::new(p);
    let (outputs, trace) = run_pipeline(g, &cfg, None, budget_factor, tail.end + 2)?;
    drop(guard);
    let root = single_root(&td)?;
    let mut fragments = BTreeMap::new();
    let mut value = None;
    let mut satisfiable = true;
    for (v, out) in outputs {
        match out {
            NodeOutput::Opt { satisfiable: sat, value: val, fragment } => {
                satisfiable &= sat;
                if v == root {
                    value = val;
                }
                fragments.insert(v, fragment);
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    if !satisfiable {
        return Err(ProtocolError::Unsatisfiable);
    }
    let value =
        value.ok_or(ProtocolError::Node("the root reported no optimum".to_owned()))?;
    let parts: Vec<SelectedSet> = fragments.values().cloned().collect();
    let witness = union_selected(sort, &parts);
    let report = report_for(&sched, tail, &trace, class_count, true);
    Ok(Distributed::Done(OptimizeRun { value, witness, fragments, trace, report }))
}

/// Counts the satisfying assignments of a property with free set variables
/// on the network; the root learns the exact total.
pub fn distributed_count(
    g: &Graph,
    d: u32,
    p: &dyn RegularPredicate,
    budget_factor: u32,
) -> Result<Distributed<CountRun>, ProtocolError> {
    validate(g, d, budget_factor)?;
    let (td, d_t) = match prepare(g, d, budget_factor)? {
        Prep::Large(trace) => return Ok(Distributed::LargeTreedepth { trace }),
        Prep::Ready { td, d_t } => (td, d_t),
    };
    dp::count(g, &td, p)?;
    // Every per-class count is at most 2^(sum of the variables' universe
    // sizes), and the universes depend only on n, so all nodes can size
    // the count fields identically.
    let universe: usize = p
        .free_vars()
        .iter()
        .map(|&(_, sort)| match sort {
            SetSort::Vertices => g.n(),
            SetSort::Edges => g.n() * (g.n() - 1) / 2,
        })
        .sum();
    let count_bits = universe + 1;
    if count_bits > u16::MAX as usize {
        return Err(ProtocolError::BadInput(
            "the graph is too large for the count framing".to_owned(),
        ));
    }
    let vocab = p.label_vocabulary().to_vec();
    let budget = round_budget(g.n(), budget_factor);
    let (sched, tail) = fold_setup(budget, d, Mission::Count, p, d_t, &vocab, count_bits)?;
    let class_count = p.class_count();
    let cfg = Config {
        mission: Mission::Count,
        sched,
        tail: None,
        p: Some(p),
        vocab,
        mark_bit: None,
        sign: 1,
        free: p.free_vars().to_vec(),
        class_count,
        count_bits,
    };
    let guard = FreezeGuard::new(p);
    let (outputs, trace) = run_pipeline(g, &cfg, None, budget_factor, tail.end + 2)?;
    drop(guard);
    let root = single_root(&td)?;
    let mut total = None;
    for (v, out) in outputs {
        match out {
            NodeOutput::Count { total: t } => {
                if v == root {
                    total = t;
                }
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    let total = total.ok_or(ProtocolError::Node("the root reported no count".to_owned()))?;
    let report = report_for(&sched, tail, &trace, class_count, false);
    Ok(Distributed::Done(CountRun { total, trace, report }))
}

/// Checks distributedly that the marked elements — vertices or edges
/// carrying `mark_label`, by the formula's free variable sort — satisfy
/// the property and realize the optimal weight.
///
/// One bottom-up sweep carries three aggregates: the optimum tables, the
/// decision class of the marked assignment, and the marked weight; the
/// root accepts when the class is accepting and the weight matches the
/// optimum.
pub fn distributed_optmarked(
    g: &Graph,
    d: u32,
    f: &MsoFormula,
    mark_label: &str,
    maximize: bool,
    budget_factor: u32,
) -> Result<Distributed<MarkedRun>, ProtocolError> {
    validate(g, d, budget_factor)?;
    let (td, d_t) = match prepare(g, d, budget_factor)? {
        Prep::Large(trace) => return Ok(Distributed::LargeTreedepth { trace }),
        Prep::Ready { td, d_t } => (td, d_t),
    };
    let p = compile_mso(f, (d_t as usize).max(2)).map_err(DpError::from)?;
    let [(var, sort)] = p.free_vars() else {
        return Err(ProtocolError::BadInput(format!(
            "marked-optimality needs exactly one free set variable, the formula has {}",
            p.free_vars().len()
        )));
    };
    let (var, sort) = (var.clone(), *sort);
    let marked = match sort {
        SetSort::Vertices => SelectedSet::Vertices(
            g.nodes().filter(|&v| g.node_has_label(v, mark_label)).collect(),
        ),
        SetSort::Edges => SelectedSet::Edges(
            g.edges().filter(|&(u, v)| g.edge_has_label(u, v, mark_label)).collect(),
        ),
    };
    let assignment = Assignment::new().set(var, selected_value(&marked));
    // Saturate both sweeps unconditionally — the distributed run always
    // computes both, even when one side already settles the answer.
    dp::decide_assigned(g, &td, &p, &assignment)?;
    match dp::optimize(g, &td, &p, maximize) {
        Ok(_) | Err(DpError::Unsatisfiable) => {}
        Err(e) => return Err(e.into()),
    }
    // The marked elements travel as one extra bit of the label masks, so
    // the wire vocabulary is the predicate's plus the mark label.
    let mut vocab = p.label_vocabulary().to_vec();
    let mark_bit = match vocab.iter().position(|l| l == mark_label) {
        Some(bit) => bit,
        None => {
            vocab.push(mark_label.to_owned());
            vocab.len() - 1
        }
    };
    let budget = round_budget(g.n(), budget_factor);
    let (sched, tail) = fold_setup(budget, d, Mission::OptMarked, &p, d_t, &vocab, 0)?;
    let class_count = p.class_count();
    let cfg = Config {
        mission: Mission::OptMarked,
        sched,
        tail: None,
        p: Some(&p),
        vocab,
        mark_bit: Some(mark_bit),
        sign: if maximize { 1 } else { -1 },
        free: p.free_vars().to_vec(),
        class_count,
        count_bits: 0,
    };
    let guard = FreezeGuard::new(&p);
    let (outputs, trace) = run_pipeline(g, &cfg, None, budget_factor, tail.end + 2)?;
    drop(guard);
    let root = single_root(&td)?;
    let mut per_node = BTreeMap::new();
    for (v, out) in outputs {
        match out {
            NodeOutput::Marked { accept } => {
                per_node.insert(v, accept);
            }
            _ => return Err(ProtocolError::Node(format!("node {v} finished the wrong mission"))),
        }
    }
    let accept =
        *per_node.get(&root).ok_or(ProtocolError::Node("the root produced no output".to_owned()))?;
    let report = report_for(&sched, tail, &trace, class_count, false);
    Ok(Distributed::Done(MarkedRun { accept, per_node, trace, report }))
}
