//! Variational Gaussian-process motion planning.
//!
//! Trajectories are distributions over joint-space paths: a sparse GP
//! posterior parameterized by waypoint-like inducing variables, optimized by
//! stochastic gradient descent on a negative ELBO that combines collision,
//! soft-constraint, and grasp terms with a whitened KL regularizer. Hard
//! joint limits come from a sigmoid squashing map and start/goal equality
//! from fixed inducing values.

pub mod error;
pub mod scalar;
pub mod linalg;
pub mod kernels;
pub mod gp;
pub mod robot;
pub mod sdf;
pub mod objective;
pub mod optimizer;
pub mod planner;
pub mod bench;

pub use error::{Error, Result};
