//! Dense real linear algebra for the CCA computations.

mod decomp;
mod matrix;

pub use decomp::{
    center_rows, cholesky, inv_sqrt_sym, orthonormalize_columns, solve_lower, svd, sym_eig, Svd,
    DEFAULT_EIG_FLOOR,
};
pub use matrix::Matrix;
pub(crate) use matrix::dot;
