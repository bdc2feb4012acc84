//! Structured linear algebra for stationary lattice covariances.

mod circulant;
mod impute;
mod pcg;

pub use circulant::{circulant_matvec, unconditional_draw, CirculantOperator, Embedding};
pub use impute::conditional_impute;
pub use pcg::{pcg_solve, FnOperator, IdentityOperator, LinearOperator, PcgConfig, PcgReport};
