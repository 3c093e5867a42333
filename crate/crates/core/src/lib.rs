//! Hierarchical contrastive learning of sentence embeddings.
//!
//! Sequences are sliced into fixed-length segments, each segment is encoded
//! independently by a small transformer, and segment vectors are pooled into
//! a sequence vector. Training combines a segment-level (local) InfoNCE loss
//! with the usual sequence-level (global) one.

pub mod error;
pub mod numerics;

pub use error::{HiclError, Result};
pub mod encoder;
pub mod textproc;
pub mod hierarchy;
pub mod losses;
pub mod eval;
pub mod training;
pub mod bench;
