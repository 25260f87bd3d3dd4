//! Seeded, chunk-parallel ensemble simulation.
//!
//! Realization `k` draws its crosstalk matrix from a ChaCha8 stream seeded by
//! [`realization_seed`]`(seed, k)`, so the sample sequence does not depend on
//! how the index range is split into chunks. Chunks are processed in parallel
//! with private accumulators and merged once, in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::moments::StreamingMoments;
use crate::error::{Error, Result};
use crate::model::{
    build_effective_matrix, log_det_pair, mutual_information, sample_crosstalk, ChannelParams,
    DeterministicProfile,
};

/// Rejections above this fraction of attempted realizations abort a run.
pub const MAX_REJECTION_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: ChannelParams,
    pub profile: DeterministicProfile,
    pub runs: u64,
    pub seed: u64,
    pub chunks: usize,
    /// Keep every accepted `(I, I1, I2)`; needed for CDF and KS.
    pub retain_samples: bool,
}

impl RunConfig {
    pub fn new(params: ChannelParams, profile: DeterministicProfile, runs: u64, seed: u64) -> Self {
        Self {
            params,
            profile,
            runs,
            seed,
            chunks: 1,
            retain_samples: true,
        }
    }

    pub fn with_chunks(mut self, chunks: usize) -> Self {
        self.chunks = chunks;
        self
    }

    pub fn with_retain_samples(mut self, retain: bool) -> Self {
        self.retain_samples = retain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter {
                field: "runs",
                reason: "must be >= 1".into(),
            });
        }
        if self.chunks == 0 || self.chunks as u64 > self.runs {
            return Err(Error::InvalidParameter {
                field: "chunks",
                reason: format!("must be in 1..={}, got {}", self.runs, self.chunks),
            });
        }
        self.profile.check_modes(&self.params)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the random stream for realization `index` of a run seeded with `seed`.
pub fn realization_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Accepted samples in realization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleSamples {
    pub i: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
}

impl EnsembleSamples {
    fn with_capacity(n: usize) -> Self {
        Self {
            i: Vec::with_capacity(n),
            i1: Vec::with_capacity(n),
            i2: Vec::with_capacity(n),
        }
    }

    fn append(&mut self, other: &mut Self) {
        self.i.append(&mut other.i);
        self.i1.append(&mut other.i1);
        self.i2.append(&mut other.i2);
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub moments: StreamingMoments,
    pub samples: Option<EnsembleSamples>,
}

impl EnsembleOutput {
    pub fn rejected(&self) -> u64 {
        self.moments.rejected
    }
}

/// One realization: `Ok(Some((I, I1, I2)))`, or `Ok(None)` when singular.
pub fn simulate_realization(
    params: &ChannelParams,
    profile: &DeterministicProfile,
    seed: u64,
) -> Result<Option<(f64, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample_crosstalk(params.n_modes(), &mut rng);
    let real = build_effective_matrix(profile, &g, params).map_err(|e| match e {
        Error::Eigendecomposition { .. } => Error::Eigendecomposition { seed },
        other => other,
    })?;
    let rho = params.rho();
    match (mutual_information(&real, rho), log_det_pair(&real, rho)) {
        (Ok(i), Ok((i1, i2))) => Ok(Some((i, i1, i2))),
        (Err(Error::SingularChannel { .. }), _) | (_, Err(Error::SingularChannel { .. })) => Ok(None),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn run_chunk(
    config: &RunConfig,
    range: std::ops::Range<u64>,
) -> Result<(StreamingMoments, Option<EnsembleSamples>)> {
    let mut moments = StreamingMoments::new();
    let mut samples = config
        .retain_samples
        .then(|| EnsembleSamples::with_capacity((range.end - range.start) as usize));
    for index in range {
        let seed = realization_seed(config.seed, index);
        match simulate_realization(&config.params, &config.profile, seed)? {
            Some((i, i1, i2)) => {
                moments.push(i, i1, i2);
                if let Some(s) = samples.as_mut() {
                    s.i.push(i);
                    s.i1.push(i1);
                    s.i2.push(i2);
                }
            }
            None => moments.reject(),
        }
    }
    Ok((moments, samples))
}

/// Index ranges of the `chunks` contiguous pieces of `0..runs`.
pub fn chunk_ranges(runs: u64, chunks: usize) -> Vec<std::ops::Range<u64>> {
    let chunks = chunks as u64;
    let base = runs / chunks;
    let extra = runs % chunks;
    let mut start = 0;
    (0..chunks)
        .map(|c| {
            let len = base + u64::from(c < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Runs the ensemble on the current rayon pool.
pub fn run_ensemble(config: &RunConfig) -> Result<EnsembleOutput> {
    config.validate()?;
    let parts: Vec<_> = chunk_ranges(config.runs, config.chunks)
        .into_par_iter()
        .map(|range| run_chunk(config, range))
        .collect::<Result<_>>()?;

    let mut moments = StreamingMoments::new();
    let mut samples = config
        .retain_samples
        .then(|| EnsembleSamples::with_capacity(config.runs as usize));
    for (m, mut s) in parts {
        moments.merge(&m);
        if let (Some(all), Some(part)) = (samples.as_mut(), s.as_mut()) {
            all.append(part);
        }
    }
    let attempted = moments.attempted();
    if moments.rejected as f64 > MAX_REJECTION_RATE * attempted as f64 {
        return Err(Error::RejectionRateExceeded {
            rejected: moments.rejected,
            attempted,
        });
    }
    Ok(EnsembleOutput { moments, samples })
}
