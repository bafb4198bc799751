//! Dense matrices, fully connected layers with explicit backward passes, Adam,
//! and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layer;
mod matrix;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, CoordinateCheck, GradCheckConfig, GradCheckReport};
pub use layer::{init_weights, Activation, Dense, InitScheme, LayerCache, ParamTensor};
pub use matrix::Matrix;
