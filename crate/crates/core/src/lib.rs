//! Indefinite quadratic programs and affine variational inequalities over
//! simple convex sets: DCA iterations, projected dynamical systems, and the
//! scalar pseudomonotonicity analysis on `[-1, 1]`.

pub mod bench;
pub mod cli;
pub mod dca;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod projection;
pub mod scalar;
pub mod spectral;
pub mod subproblem;

pub use error::{Error, Result};
