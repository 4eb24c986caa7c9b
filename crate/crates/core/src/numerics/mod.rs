//! Dense matrix primitives, Cholesky whitening and batch statistics.
//!
//! Rows are samples and columns are features everywhere in the crate.

mod linalg;
mod matrix;
mod stats;

pub use linalg::{cholesky, covariance, invert_lower, whiten_batch, WhitenReport};
pub use matrix::{dot, matmul, Matrix};
pub use stats::{
    argmax, column_norms, cross_correlation, l2_normalize_rows, l2_normalize_rows_backward,
    log_softmax_rows, log_sum_exp, softmax_rows, ColumnStandardizer, NORM_EPS,
};
