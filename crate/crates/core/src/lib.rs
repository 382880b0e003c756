//! Partitioned, gradient-conditioned Gaussian process surrogate for
//! quadrotor forces, torques and rotor noise.

pub mod artifact;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod quad_model;
pub mod runtime;
pub mod schur;

pub use error::{GpError, Result};
