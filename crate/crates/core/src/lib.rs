//! Inductive link prediction over knowledge graphs by reasoning on the
//! enclosing subgraph around each target pair.
//!
//! The crate is `no_std` (with `alloc`). File IO, the command line and the
//! thread pool live in the companion `grail` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod benchgen;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod logic;
pub mod model;
pub mod rng;
pub mod subgraph;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use graph::{KnowledgeGraph, Triple, Vocab};
pub use model::{GnnConfig, GnnParams, Readout};
pub use subgraph::{ExtractMode, LabelScheme, LabeledSubgraph, Subgraph};
pub use tensor::Tensor;
