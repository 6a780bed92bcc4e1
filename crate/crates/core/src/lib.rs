//! Semi-supervised time-series classification over warping-aware batch
//! graphs.
//!
//! Pairwise LB_Keogh (or DTW) distances are computed once for a whole
//! dataset; each training batch slices its block out of that matrix,
//! turns it into a sparse row-stochastic graph, and a residual
//! convolutional backbone followed by a graph convolution classifies the
//! nodes. Only labeled nodes contribute to the loss; unlabeled and test
//! nodes participate through graph aggregation.

pub mod dataset;
pub mod distance;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
