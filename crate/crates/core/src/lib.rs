//! Manifold-valued graph networks over time-frequency SPD covariance graphs.

pub mod csp;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod optim;
pub mod signal;
pub mod spd;
pub mod train;

pub use error::{Error, Result};
