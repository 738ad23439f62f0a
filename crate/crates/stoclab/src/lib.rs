//! Simulation laboratory for a Gaussian model of domain shift with an
//! invariant and a spurious feature block.
//!
//! The numeric kernels ([`specialfns`], [`linalg`]) are generic over
//! [`Real`] (`f32` or `f64`). The model layers run in `f64` through the
//! aliases below.

pub mod analytics;
pub mod augment;
pub mod classify;
pub mod contrastive;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod selftrain;
pub mod specialfns;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense `f64` matrix used by the model layers.
pub type Matrix = linalg::Mat<f64>;
/// Dense `f32` matrix.
pub type MatrixF32 = linalg::Mat<f32>;
/// Mill's ratio evaluation in `f64`.
pub type MillsEval = specialfns::MillsEval<f64>;

/// Crate version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
