//! q-series, spherical kernels on the lattice `-q^N ∪ q^Z`, the graded spherical
//! transform and fitted product formulae, with verification suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod error;
pub mod fit;
pub mod kernels;
pub mod lattice;
pub mod product;
pub mod qseries;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;
