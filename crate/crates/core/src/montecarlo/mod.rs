//! Monte Carlo estimation of the mutual-information distribution.

pub mod cdf;
pub mod ensemble;
pub mod moments;

pub use cdf::{ks_statistic, normal_cdf, EmpiricalCdf, KsResult};
pub use ensemble::{
    chunk_ranges, realization_seed, run_ensemble, simulate_realization, EnsembleOutput, EnsembleSamples, RunConfig,
    MAX_REJECTION_RATE,
};
pub use moments::{joint_covariance, JointCovariance, StreamingMoments};
