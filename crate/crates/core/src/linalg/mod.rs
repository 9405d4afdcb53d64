//! Dense matrix kernels and truncated SVD.

mod matrix;
mod noise;
mod svd;

use thiserror::Error;

pub use matrix::Matrix;
pub(crate) use matrix::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
pub use noise::add_noise;
pub use svd::{
    nuclear_norm, orthonormality_error, ratio_to_rank, singular_values, truncated_svd,
    TruncatedFactors, OVERSAMPLING, POWER_ITERATIONS,
};

/// Frobenius norm, provided as a free function alongside [`nuclear_norm`].
pub fn frobenius_norm(h: &Matrix) -> f64 {
    h.frobenius_norm()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: shape mismatch between {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("rank {k} outside 1..={} for a {rows}x{cols} matrix", rows.min(cols))]
    RankOutOfRange { k: usize, rows: usize, cols: usize },
    #[error("truncation ratio {0} outside [0, 1)")]
    RatioOutOfRange(f64),
    #[error("noise standard deviation must be a finite nonnegative number, got {0}")]
    NegativeSigma(f64),
    #[error("inconsistent factor shapes: u {}x{}, {s} singular values, v {}x{}", u.0, u.1, v.0, v.1)]
    FactorShape {
        u: (usize, usize),
        s: usize,
        v: (usize, usize),
    },
    #[error("singular values must be nonnegative and non-increasing")]
    UnsortedSingularValues,
    #[error("factor {factor} is not orthonormal (error {error:.3e})")]
    NotOrthonormal { factor: &'static str, error: f64 },
}
