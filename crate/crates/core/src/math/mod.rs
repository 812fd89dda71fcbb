//! Numerical substrate: dense matrices, reverse-mode differentiation,
//! multilayer perceptrons, and the Adam optimizer.

pub mod adam;
pub mod density;
pub mod matrix;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::Adam;
pub use density::gaussian_log_density;
pub use matrix::Matrix;
pub use mlp::{mlp_forward, Activation, MlpSpec, OutputTransform};
pub use params::{ParamId, ParamSnapshot, ParamStore};
pub use tape::{Gradients, RowScalar, Tape, Var};
