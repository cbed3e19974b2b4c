//! Grammar-based e-graphs for equivalence-aware symbolic regression.
//!
//! Expressions are sequences of production rules over a single nonterminal
//! `A`. Rewrite rules are pattern pairs written in the same rule syntax. The
//! [`egraph`] module stores every expression equivalent to an input under a set
//! of rewrite rules in a compact shared structure, and the search algorithms
//! in [`mcts`] and [`drl`] use it to share credit among equivalent sequences.
//!
//! ```
//! use eggsr::egraph::{check_equivalent, Limits};
//! use eggsr::grammar::Expr;
//! use eggsr::rewrite::{builtin_rules, Category};
//!
//! let lhs = Expr::parse_sequence("A->log(A), A->A*A, A->x1, A->x2").unwrap();
//! let rhs = Expr::parse_sequence("A->(A+A), A->log(A), A->x1, A->log(A), A->x2").unwrap();
//! let rules = builtin_rules(&[Category::LogExp]).unwrap();
//! assert!(check_equivalent(&lhs, &rhs, &rules, &Limits::default()));
//! ```
//!
//! The guide under `book/` walks through each module; its snippets are
//! compiled as doc-tests of this crate.

pub mod dataopt;
pub mod drl;
pub mod egraph;
pub mod grammar;
pub mod mcts;
pub mod rewrite;

pub use egraph::{EGraph, Id, Limits, SaturationReport};
pub use grammar::{Expr, Grammar, Op, ProductionRule, RuleSequence};
pub use rewrite::{Category, RewriteRule};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grammar.md")]
    mod grammar {}
    #[doc = include_str!("../../../book/src/rewrite.md")]
    mod rewrite {}
    #[doc = include_str!("../../../book/src/egraph.md")]
    mod egraph {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/mcts.md")]
    mod mcts {}
    #[doc = include_str!("../../../book/src/drl.md")]
    mod drl {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
}
