//! Metabolic network equilibria as a sequence-to-sequence problem.
//!
//! This crate holds the allocation-only core: network representation, random
//! network generators, the classical equilibrium solvers, the token codec,
//! dataset assembly, a from-scratch encoder-decoder transformer, and the
//! accuracy metrics used to evaluate it. Everything here is `no_std` + `alloc`;
//! file formats, parallel drivers and the command line live in the `eqnet`
//! crate.
#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod equilibrium;
pub mod eval;
pub mod generators;
pub mod graph;
pub mod rng;
pub mod tokenizer;
pub mod transformer;

pub use equilibrium::{has_equilibrium, solve_equilibrium, ConcentrationVector, SolveError};
pub use generators::{GeneratorConfig, GraphKind};
pub use graph::{MetabolicNetwork, NodeId, WeightedEdge};
pub use rng::RngStream;
pub use tokenizer::{Token, TokenSequence, Vocabulary};
