//! Sparse symmetric matrices and their Cholesky factorization, plus the small
//! dense helpers the marginalization code shares.

mod cholesky;
pub mod dense;
mod ordering;
mod sparse;

pub use cholesky::{factorize, factorize_with, CholeskyFactor, PIVOT_TOLERANCE};
pub use ordering::Ordering;
pub use sparse::SparseSymmetric;
