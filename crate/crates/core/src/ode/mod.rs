//! Explicit Runge-Kutta solvers: plain integration with adaptive step
//! control and a tape-recorded fixed-step path for training.

pub mod order;
pub mod solver;
pub mod taped;
pub mod tableau;

pub use order::{convergence_order, log_log_slope, tolerance_sweep};
pub use solver::{field_fn, fixed_step_solve, integrate, integrate_partial, DenseTrajectory, FnField, SolverConfig, VectorField};
pub use taped::{integrate_differentiable, taped_step, TapedField};
pub use tableau::{Method, Tableau};
