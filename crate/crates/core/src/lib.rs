pub mod actor_critic;
pub mod dynamics;
pub mod envs;
pub mod experiment;
pub mod error;
pub mod gp;
pub mod math;
pub mod ode;
pub mod seeds;
pub mod trajectory;

pub use error::{Error, Result};
