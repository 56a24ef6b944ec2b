//! The gluing algebra of terminal graphs and regular predicates over it.
//!
//! A *regular predicate* is a graph property (possibly with free set
//! variables) together with a finite classification of terminal graphs that
//! respects gluing: the class of a glued graph is determined by the classes
//! of its parts and the glue matrix. Such a classification is exactly what
//! lets dynamic programming over a tree decomposition — and, later, a
//! distributed protocol exchanging class ids — evaluate the property.
//!
//! The module provides:
//! - [`WTerminalGraph`], [`GlueMatrix`], [`glue`]: the algebra itself,
//! - [`compile_mso`]: classes for an arbitrary normalized formula, built
//!   from quantifier-rank types,
//! - [`builtin_predicate`]: hand-written classifications for a few standard
//!   properties, used to cross-check the compiler.

mod builtins;
mod glue;
mod predicate;
mod types;

pub use builtins::{builtin_predicate, BUILTIN_NAMES};
pub use glue::{
    glue, glue_matrix_for, leaf_graph, leaf_graph_for_bag, restrict_assignment, restrict_sets,
    GlueMatrix, WTerminalGraph, MAX_TERMINALS,
};
pub use predicate::{compile_mso, compile_mso_with_budget, CompiledPredicate, DEFAULT_CLASS_BUDGET};
pub use types::{ClassId, RegularPredicate, SelectedSet, SetSort};

/// Errors from gluing, compilation, and predicate evaluation.
#[derive(Debug, thiserror::Error)]
pub enum AlgebraError {
    /// A terminal list is unusable (duplicate, unknown vertex, too long, empty).
    #[error("bad terminal list: {0}")]
    BadTerminals(String),
    /// A glue matrix is malformed or does not fit its operands.
    #[error("bad glue matrix: {0}")]
    BadMatrix(String),
    /// The operands' free-variable values disagree on identified elements.
    #[error("incompatible assignment: {0}")]
    IncompatibleAssignment(String),
    /// Compilation exceeded the configured class budget.
    #[error("class budget exhausted: {count} classes exceed the cap of {cap}")]
    Budget { count: usize, cap: usize },
    /// A class id that this predicate never produced.
    #[error("unknown class id {0}")]
    UnknownClass(u32),
    /// Not one of the built-in predicate names.
    #[error("unknown builtin predicate `{0}`")]
    UnknownName(String),
    /// The formula must be normalized (set quantifiers and set atoms only).
    #[error("formula is not in normalized form: {0}")]
    NotNormalized(String),
    /// The predicate was compiled for a smaller terminal budget.
    #[error("graph has {got} terminals but the predicate supports at most {max}")]
    WidthExceeded { got: usize, max: usize },
    /// A brute-force enumeration inside classification would be too large.
    #[error("classification too large: {0}")]
    SizeLimit(String),
}
