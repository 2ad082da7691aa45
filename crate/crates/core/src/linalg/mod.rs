//! Dense linear algebra: factorizations, pseudo-inverse, projectors, eigenvalues and the
//! matrix exponential. Everything here targets small dense matrices (up to a few hundred rows).

mod decomp;
mod eigen;
mod expm;
mod matrix;

pub use decomp::{
    complement_projector, default_rcond, inverse, norm2_matrix, orthonormal_columns,
    projector_onto_columns, pseudo_inverse, solve, svd, symmetric_eigen, Lu, Svd,
};
pub use eigen::{
    eigen_system, eigenvalues, exp_norm, exp_norm_bound, exp_norm_bound_from, spectral_summary,
    EigenSystem, SpectralSummary,
};
pub use expm::matrix_exp;
pub use matrix::{axpy, dot, norm2, DenseMatrix};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("basis is rank deficient (rank {rank} < {cols} columns)")]
    DegenerateBasis { rank: usize, cols: usize },
    #[error("result overflows the floating-point range")]
    Range,
}
