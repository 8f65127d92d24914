//! Solver library for games whose payoffs may depend on the players' beliefs
//! about each other's strategies, together with a finite-horizon stochastic
//! extension and a small PRISM-inspired modelling language.
//!
//! The crate is organised along the solving pipeline:
//!
//! - [`expr`]: exact-rational multivariate polynomials over action-probability
//!   variables, with parsing, evaluation, differentiation and substitution.
//! - [`game`]: normal-form games with expression-valued payoff entries,
//!   strategy profiles, equilibrium verification and support enumeration.
//! - [`nlp`]: the per-support constrained program, a deterministic multi-start
//!   solver, welfare-optimal equilibrium search and an independent grid oracle.
//! - [`pcsg`]: concurrent stochastic games with expression-valued rewards,
//!   solved over a finite horizon by backward induction over stage games.
//! - [`modelio`]: the `.pg` model language (parser, printer, elaboration), the
//!   bundled model catalog and CSV/JSON result output.
//! - [`cli`]: the `psygame` command-line front end.
//!
//! The narrative guide lives in `book/`; its code snippets compile against
//! this crate and run as doc-tests.

pub mod cli;
pub mod expr;
pub mod game;
pub mod modelio;
pub mod nlp;
pub mod pcsg;

#[cfg(doctest)]
mod book_doctests;
