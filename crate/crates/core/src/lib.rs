//! Turbo message passing for compressive robust PCA.
//!
//! The problem: recover a low-rank matrix `L` and a sparse matrix `S` from
//! compressive linear measurements `y = A·vec(L + S) + n`. The solver passes
//! mean/variance messages between three modules — a linear (LMMSE) estimator
//! tied to the measurement operator, a sparse denoiser, and a spectral
//! low-rank denoiser — each emitting *extrinsic* output so that errors stay
//! uncorrelated with the module inputs across iterations.
//!
//! Alongside the iterative solver ([`engine`]) the crate provides its scalar
//! state-evolution predictor ([`se`]): the matrix-valued recursion collapses
//! to two variance sequences driven by transfer functions of the three
//! modules. The [`convergence`] module turns those transfer functions into
//! sampling-rate thresholds that classify a problem configuration as
//! guaranteed, indeterminate, or impossible for the solver.
//!
//! Numerics are generic over the floating-point scalar (`f32` or `f64`)
//! through the [`scalar::Scalar`] trait; the [`F32`]/[`F64`] aliases pin the
//! common choices.

pub mod convergence;
pub mod dct;
pub mod engine;
pub mod error;
pub mod instances;
pub mod linear;
pub mod lowrank;
pub mod message;
pub mod operators;
pub mod quad;
pub mod scalar;
pub mod se;
pub mod seeding;
pub mod sparse;
pub mod stats;

pub use error::{CrpcaError, Result};
pub use message::MeanVarMessage;
pub use scalar::{Real, Scalar};

/// Single-precision scalar type for the whole stack.
pub type F32 = f32;
/// Double-precision scalar type for the whole stack (the default everywhere).
pub type F64 = f64;
