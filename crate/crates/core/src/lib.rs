//! Graph diffusion reclassification of semi-supervised node labels,
//! directed-graph diffusion operators and trainable GCN / diffusive-GCN
//! classifiers.

// Parameter checks are written as `!(x > 0.0)` on purpose, so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod data_io;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod neural;
pub mod sparse;
pub mod synthetic;

pub use error::{GdrError, Result};
