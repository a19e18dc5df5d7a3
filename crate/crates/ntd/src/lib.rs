//! Library for studying multistep temporal-difference learning with linear
//! function approximation under off-policy sampling: model loading and
//! validation, dense linear-algebra kernels, closed-form stability analysis
//! (iteration matrices, spectra, contraction certificates, horizon bounds),
//! deterministic projected iterations, and seeded stochastic simulations.

pub mod analysis;
pub mod dp;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod td;

pub use error::{NtdError, Result};
