//! MSO formulas over labeled graphs: AST, concrete syntax, normalization,
//! and brute-force evaluation.
//!
//! Formulas quantify over four sorts — vertices, edges, vertex sets, edge
//! sets — with atoms for adjacency, incidence, equality, membership, and
//! labels, plus a set-atom layer targeted by [`normalize`]. The
//! [`eval_bruteforce`] / [`opt_bruteforce`] / [`count_bruteforce`] trio
//! answers queries by direct enumeration on small instances and serves as
//! the ground-truth oracle for the compiled and distributed engines.
//!
//! ```
//! use tdmso::graph::Graph;
//! use tdmso::mso::{eval_bruteforce, parse_formula, Assignment};
//!
//! let triangle_free = parse_formula(
//!     "~ exists_v x1. exists_v x2. exists_v x3. \
//!      (adj(x1,x2) & adj(x2,x3) & adj(x3,x1))",
//! )?;
//! let k3 = Graph::from_edges(1..=3, [(1, 2), (2, 3), (1, 3)])?;
//! assert!(!eval_bruteforce(&k3, &triangle_free, &Assignment::new())?);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod ast;
mod brute;
pub mod library;
mod normalize;
mod parse;

pub use ast::{Atom, Body, MsoFormula, Sort};
pub use brute::{
    count_bruteforce, edge_key, eval_bruteforce, opt_bruteforce, witness_weight, Assignment,
    EdgeKey, Value,
};
pub use normalize::normalize;
pub use parse::parse_formula;

use thiserror::Error;

/// Errors from parsing, sort checking, and brute-force evaluation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MsoError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("sort error at {line}:{col}: {msg}")]
    Sort { line: usize, col: usize, msg: String },
    #[error("sort error: {0}")]
    BadFormula(String),
    #[error("assignment error: {0}")]
    BadAssignment(String),
    #[error("query error: {0}")]
    BadQuery(String),
    #[error("instance too large for brute force: {0}")]
    SizeLimit(String),
}
