//! Knowledge-grounded visual question answering at desk scale.
//!
//! The crate builds a filtered symbolic knowledge graph from heterogeneous
//! triple sources, runs a differentiable relational graph network over it,
//! fuses the graph's per-node answer scores with an implicit multimodal
//! encoder via dual-head late fusion, and trains/evaluates/ablates the whole
//! system end to end.
//!
//! Start from the runnable programs in `examples/` — there is one per major
//! capability — or from the `kgvqa` binary, which exposes the same
//! functionality as subcommands.

pub mod encoder;
pub mod error;
pub mod fusion;
pub mod grounding;
pub mod harness;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod rgcn;
pub mod seed;
pub mod text;
pub mod verify;

pub use error::{Error, Result};
pub mod cli;
