//! Coinductive equivalence engine for rational streams with internal steps.
//!
//! The crate computes strong and weak bisimilarity of rational streams by
//! exact fixpoint iteration on finite relation lattices, implements
//! parameterized coinduction (`paco`), its generalization with a base
//! closure (`gpaco`), the context-sensitive weak bisimulation `euttG`, and
//! a checked proof-rule kernel whose accepted proofs are audited against the
//! semantic engine.
//!
//! Module map:
//! - [`lattice`]: relations over a finite universe, monotone operators,
//!   fixpoint and closure combinators.
//! - [`streams`]: stream syntax, guardedness, one-step unfolding, and
//!   reachable-universe construction.
//! - [`bisim`]: the bisimulation functor family, the derived relations, and
//!   the up-to closures with their compatibility checks.
//! - [`gpaco`]: parameterized coinduction, the companion tower oracle, and
//!   the proof-rule law fuzzer.
//! - [`euttg`]: the four-knowledge weak bisimulation, its equational theory
//!   verifier, and the companion inconsistency reproduction.
//! - [`kernel`]: the checked proof-rule engine and its audit.
//! - [`cli`]: command-line entry points and the proof-script format.

pub mod bisim;
pub mod cli;
pub mod euttg;
pub mod gpaco;
pub mod kernel;
pub mod lattice;
pub mod streams;
