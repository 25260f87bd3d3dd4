//! Fiber-optical MIMO channel modeled as a lossy chaotic cavity.
//!
//! The crate evaluates the mutual information of the channel
//! `I = ln det[(H0 + gamma G)^2 + Gamma^2 + rho] - ln det[(H0 + gamma G)^2 + Gamma^2]`
//! in two independent ways: seeded Monte Carlo over Gaussian Hermitian crosstalk
//! matrices ([`montecarlo`]), and large-N saddle-point formulas for its mean
//! ([`replica`]) and Gaussian-fluctuation variance ([`hessian`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod hessian;
pub mod model;
pub mod montecarlo;
pub mod replica;
pub mod scattering;

pub use error::{Error, Result};
pub use model::{ChannelParams, DeterministicProfile};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
