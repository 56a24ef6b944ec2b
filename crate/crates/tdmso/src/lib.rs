//! Decide, optimize, and count monadic second-order (MSO) graph properties on
//! graphs of small treedepth, either directly or inside a simulated
//! synchronous message-passing network with per-edge bandwidth accounting.
//!
//! The pipeline: an elimination forest witnesses small treedepth; its bags
//! form a canonical tree decomposition; formulas are compiled into finite
//! composition algebras ([`algebra`]); a dynamic program folds classes over
//! the decomposition ([`dp`]); and the same fold runs as a distributed
//! protocol ([`protocols`]) on the simulator ([`sim`]).

pub mod acceptance;
pub mod algebra;
pub mod dp;
pub mod generate;
pub mod graph;
pub mod hfree;
pub mod mso;
pub mod protocols;
pub mod report;
pub mod sim;

pub use graph::{Graph, NodeId};

#[cfg(doctest)]
mod book {
    //! Keeps the guide's code snippets compiling; each chapter of `book/`
    //! is injected as a doctest module so `cargo test` exercises it.

    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(graphs, "../../../book/src/graphs-and-treedepth.md");
    chapter!(decompositions, "../../../book/src/decompositions.md");
    chapter!(logic, "../../../book/src/mso-logic.md");
    chapter!(gluing, "../../../book/src/gluing-algebra.md");
    chapter!(compiling, "../../../book/src/compiling-formulas.md");
    chapter!(dp, "../../../book/src/dynamic-programming.md");
    chapter!(simulator, "../../../book/src/network-simulator.md");
    chapter!(protocols, "../../../book/src/distributed-protocols.md");
    chapter!(hfree, "../../../book/src/pattern-freeness.md");
    chapter!(cli, "../../../book/src/command-line.md");
}
