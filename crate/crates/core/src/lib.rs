//! Convolutional SVM.
//!
//! Records are passed through a stack of cyclic 1-D filters before a kernel
//! SVM classifies them. Filter weights are learned by a greedy simplified
//! swarm optimization whose fitness is the SVM accuracy on the transformed
//! records; the optimizer's parameters are picked with a small L9(3^4)
//! orthogonal-array experiment.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

pub mod convolution;
pub mod data_io;
pub mod error;
pub mod experiment;
pub mod oa;
pub mod rng;
pub mod sso;
pub mod svm;

pub use error::{CsvmError, Result};
