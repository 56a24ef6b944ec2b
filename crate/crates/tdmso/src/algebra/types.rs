//! The regular-predicate interface shared by compiled formulas, built-in
//! predicates, and everything downstream (dynamic programming, protocols).

use std::collections::BTreeSet;

use crate::graph::NodeId;
use crate::mso::Sort;

use super::glue::MAX_TERMINALS;
use super::{AlgebraError, GlueMatrix, WTerminalGraph};

/// Index of the ordered terminal pair (r, s), r < s, in a `u128` mask.
pub(super) fn term_pair(r: usize, s: usize) -> u32 {
    debug_assert!(r < s && s < MAX_TERMINALS);
    (r * (2 * MAX_TERMINALS - r - 1) / 2 + (s - r - 1)) as u32
}

pub(super) fn bit(mask: u128, i: u32) -> bool {
    mask >> i & 1 == 1
}

/// Re-indexes a terminal-pair mask through a kept-rank map, dropping pairs
/// with a dropped endpoint.
pub(super) fn remap_pairs(mask: u128, old_tau: usize, keep: &[Option<usize>]) -> u128 {
    let mut out = 0u128;
    for r in 0..old_tau {
        for s in r + 1..old_tau {
            if bit(mask, term_pair(r, s)) {
                if let (Some(nr), Some(ns)) = (keep[r], keep[s]) {
                    out |= 1 << term_pair(nr.min(ns), nr.max(ns));
                }
            }
        }
    }
    out
}

/// Number of set pairs in the mask that lose at least one endpoint.
pub(super) fn dropped_pairs(mask: u128, old_tau: usize, keep: &[Option<usize>]) -> u32 {
    let mut count = 0;
    for r in 0..old_tau {
        for s in r + 1..old_tau {
            if bit(mask, term_pair(r, s)) && (keep[r].is_none() || keep[s].is_none()) {
                count += 1;
            }
        }
    }
    count
}

/// Re-indexes a terminal-rank bitmask through a kept-rank map.
pub(super) fn remap_bits(mask: u32, keep: &[Option<usize>]) -> u32 {
    let mut out = 0;
    for (r, kept) in keep.iter().enumerate() {
        if mask >> r & 1 == 1 {
            if let Some(nr) = kept {
                out |= 1 << nr;
            }
        }
    }
    out
}

/// Number of set ranks in the mask that are dropped by the map.
pub(super) fn dropped_bits(mask: u32, keep: &[Option<usize>]) -> u32 {
    keep.iter()
        .enumerate()
        .filter(|&(r, kept)| mask >> r & 1 == 1 && kept.is_none())
        .count() as u32
}

/// Identifies one equivalence class of a predicate. Ids are dense, start at
/// 0, and are stable once handed out; `class_count` bounds them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The sort of a free set variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SetSort {
    Vertices,
    Edges,
}

impl SetSort {
    pub fn from_sort(sort: Sort) -> Option<SetSort> {
        match sort {
            Sort::VertexSet => Some(SetSort::Vertices),
            Sort::EdgeSet => Some(SetSort::Edges),
            Sort::Vertex | Sort::Edge => None,
        }
    }
}

/// The part of a free variable's value that lives on the terminals of some
/// class, mapped back to concrete ids via a bag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelectedSet {
    Vertices(BTreeSet<NodeId>),
    Edges(BTreeSet<(NodeId, NodeId)>),
}

impl SelectedSet {
    pub fn sort(&self) -> SetSort {
        match self {
            SelectedSet::Vertices(_) => SetSort::Vertices,
            SelectedSet::Edges(_) => SetSort::Edges,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SelectedSet::Vertices(s) => s.len(),
            SelectedSet::Edges(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A graph property (with `free_vars().len()` free set variables) together
/// with a gluing-compatible classification of terminal graphs.
///
/// The contract, written for a predicate `P` and the concrete [`glue`]
/// semantics (`glue` is defined in this module's parent):
///
/// 1. `classify_base` depends only on the ordered boundary structure and
///    assignment trace of the graph, and equal classes give equal verdicts
///    under `is_accepting`.
/// 2. `compose(classify(g1), classify(g2), m) = classify(glue(g1, g2, m))`
///    whenever the glue is defined — the homomorphism law.
///
/// `classify_base` is specified for base graphs (every vertex terminal),
/// which is all the dynamic programming ever classifies directly;
/// implementations here also accept general terminal graphs so the
/// homomorphism law can be tested against direct classification.
///
/// [`glue`]: super::glue
pub trait RegularPredicate: Send + Sync {
    /// Diagnostic name.
    fn name(&self) -> &str;

    /// Maximum number of terminals supported.
    fn width(&self) -> usize;

    /// Free set variables, in the order `classify_base` reads them from the
    /// graph's assignment and `selected` reports them.
    fn free_vars(&self) -> &[(String, SetSort)];

    /// The label names the predicate can observe, ascending. Labels outside
    /// this list never influence `classify_base`, so distributed callers
    /// only need to ship membership bits for these.
    fn label_vocabulary(&self) -> &[String] {
        &[]
    }

    /// Number of classes handed out so far (message ids fit in
    /// `ceil(log2(class_count))` bits once the predicate is frozen).
    fn class_count(&self) -> usize;

    /// The class of a terminal graph. If the predicate has free variables
    /// the graph must carry an assignment for them (restricted to the
    /// graph).
    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError>;

    /// The class of the glued graph, from the classes of the parts. Errors
    /// with [`AlgebraError::IncompatibleAssignment`] if the two classes
    /// disagree on an identified terminal or shared edge (no glued graph
    /// realizes the pair).
    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix)
        -> Result<ClassId, AlgebraError>;

    /// Whether graphs of this class satisfy the property (with the free
    /// variables as assigned).
    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError>;

    /// For each free variable, the terminal part of its value, with ranks
    /// resolved through `bag` (the class's terminals, ascending).
    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError>;

    /// Freezing forbids new classes: a later `classify_base`/`compose` that
    /// would mint one panics instead of silently growing `class_count`.
    /// Protocols freeze after saturation so message widths are stable.
    fn set_frozen(&self, frozen: bool);

    /// Deterministic text dump (class count, accepting ids, sample
    /// payloads) for golden tests and debugging.
    fn debug_dump(&self) -> String;

    /// Like [`RegularPredicate::compose`], but turns the incompatible-
    /// assignment error into `None` for enumeration loops.
    fn try_compose(
        &self,
        c1: ClassId,
        c2: ClassId,
        m: &GlueMatrix,
    ) -> Result<Option<ClassId>, AlgebraError> {
        match self.compose(c1, c2, m) {
            Ok(c) => Ok(Some(c)),
            Err(AlgebraError::IncompatibleAssignment(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
