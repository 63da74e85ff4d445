//! Grid-based solver laboratory for Dirichlet problems driven by the
//! 1-Laplacian: a regularized p-Laplacian workhorse with continuation
//! toward p = 1, the monotone sub/supersolution iteration, certificate
//! vector-field diagnostics, Cheeger constant estimation, and the
//! concave-convex existence/non-existence pipeline with its explicit
//! constants.

pub mod analysis;
pub mod calculus;
pub mod cheeger;
pub mod concave_convex;
pub mod error;
pub mod field;
pub mod grid;
pub mod plap;
pub mod sattinger;
pub mod util;
pub mod vfield;

pub use analysis::{sobolev_constants, truncate_gk, truncate_tk, vdelta, Constants};
pub use calculus::{divergence, gradient};
pub use error::{Error, Result};
pub use field::{ScalarField, VectorField};
pub use grid::{CellFlag, DomainKind, Grid};
pub use plap::{Absorption, PlapConfig, SolveReport};
