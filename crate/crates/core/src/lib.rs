//! Textual network embedding with a diffusion-smoothed sparse Gaussian
//! process.
//!
//! Every node embedding is the concatenation `h_n = [x_n; s_n]` of a
//! word-average text embedding `x_n` and a structural embedding `s_n`, the
//! posterior mean of a sparse GP whose kernel is smoothed by a learnable
//! mixture of random-walk powers over the graph. Because the structural part
//! is non-parametric in the graph, new nodes and edge changes are embedded by
//! a single forward pass.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod dynamic;
pub mod error;
pub mod eval;
pub mod gp;
pub mod graph;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod sparse;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
