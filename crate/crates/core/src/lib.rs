//! Hyperspectral super-resolution by coupled structured matrix factorization.
//!
//! The crate simulates the coupled multispectral/hyperspectral observation
//! model, fits endmembers and abundances to both observations with an
//! alternating projected-gradient solver, and computes the recovery
//! certificate that bounds the per-pixel reconstruction error of any exact
//! fit.
//!
//! Matrices are [`nalgebra::DMatrix<f64>`] with one column per pixel (or per
//! endmember).
//!
//! ```
//! use hsr_core::counterexample::{build_counterexample, verify_counterexample};
//!
//! let inst = build_counterexample(0.25).unwrap();
//! let report = verify_counterexample(&inst, 0.25).unwrap();
//! assert!((report.error - 2f64.sqrt() * 0.25).abs() < 1e-12);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod counterexample;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod real;
pub mod scenegen;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
pub use nalgebra::DMatrix;
