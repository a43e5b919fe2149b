//! Tree-structured decoding: a search-tree serialization format, per-node
//! training-example extraction, guided bootstrapping of training trees, and a
//! generate / parse / stitch inference engine with breadth-first and
//! depth-first traversal.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! network, the filesystem or a wall clock lives in the `treelm` companion
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod codec;
pub mod models;
pub mod search;
pub mod tasks;
pub mod token;
pub mod tree;

pub use codec::{DecodeError, DecodeMode, Decoded, ExpansionBlock, TrainingExample};
pub use models::{FinishReason, Generation, ModelError, ModelProvider};
pub use search::{InferenceConfig, SearchOutcome, Strategy, Verdict};
pub use tasks::{Task, TaskError};
pub use token::Token;
pub use tree::{Marker, NodeId, NodePath, PathStep, SearchTree, Traversal, TreeError};
