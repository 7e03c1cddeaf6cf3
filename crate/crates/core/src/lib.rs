//! Physics-residual training of a U-Net surrogate for steady 2D
//! incompressible flow, with the finite-difference oracle used to validate it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod loss;
pub mod nn;
pub mod solver;
pub mod stencil;
pub mod train;

pub use error::{Error, Result};
