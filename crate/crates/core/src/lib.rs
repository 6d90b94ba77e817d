//! Soft variable discretization for self-supervised representation learning.
//!
//! Embedding vectors are split into blocks, each block is softmax-normalized
//! into a relaxed one-hot variable, and a twin network is trained so that the
//! batch cross-joint distribution of those variables across two augmented
//! views has maximal entropy over its diagonal-of-diagonal and off-diagonal
//! blocks, while matching blocks of the two views agree.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discretize;
pub mod error;
pub mod eval;
pub mod infotheory;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{ImsvdError, Result};
