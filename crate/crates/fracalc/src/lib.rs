//! Calculus and distribution theory on post-critically finite self-similar
//! fractals: harmonic structures, Dirichlet forms and Laplacians, Green's
//! operators, smooth test functions with exact Laplacian action, point
//! derivatives, Lyapunov cocycles, spectral representations, distributions,
//! and two-factor product calculus.

pub mod calculus;
pub mod calibrate;
pub mod error;
pub mod green;
pub mod model;
pub mod jets;
pub mod rates;
pub mod smooth;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
