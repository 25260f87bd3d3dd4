//! C ABI over `fibermimo`.
//!
//! Fallible calls return an [`FmStatus`]. On failure a message is stored per
//! thread and read back with [`fm_last_error_message`]. Handles are opaque and
//! released with their `_free` function; passing null to `_free` is a no-op.
//! The header `include/fibermimo.h` is generated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use fibermimo::hessian::{variance, VarianceMethod, VarianceSettings};
use fibermimo::montecarlo::{
    ks_statistic, realization_seed, run_ensemble, simulate_realization, EmpiricalCdf, EnsembleOutput, RunConfig,
};
use fibermimo::replica::{mean_mutual_information, SolverSettings};
use fibermimo::{ChannelParams, DeterministicProfile, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    /// Saddle solve or Hessian evaluation failed.
    Solver = 3,
    /// Monte Carlo run aborted (rejection limit or eigensolver failure).
    Aborted = 4,
    /// Singular channel realization or resolvent.
    Singular = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmVarianceMethod {
    Analytic = 0,
    FiniteDifference = 1,
    MonteCarlo = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FmMoments {
    pub count: u64,
    pub rejected: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub var_i1: f64,
    pub var_i2: f64,
    pub cov_i1_i2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmVariance {
    pub var_i1: f64,
    pub var_i2: f64,
    pub covar: f64,
    pub var_total: f64,
    pub det_sigma_i1: f64,
    pub det_sigma_i2: f64,
    /// NaN when the covariance came from Monte Carlo.
    pub det_sigma_cov: f64,
    pub method: FmVarianceMethod,
}

/// Channel parameters and deterministic profile.
pub struct FmChannel {
    params: ChannelParams,
    profile: DeterministicProfile,
    solver: SolverSettings,
}

/// Completed Monte Carlo run with its retained samples.
pub struct FmEnsemble {
    output: EnsembleOutput,
    cdf: EmpiricalCdf,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Model(Error),
    Null(&'static str),
    Status(FmStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

fn status_of(err: &Error) -> FmStatus {
    match err {
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidMasks { .. }
        | Error::UnsupportedProfile(_)
        | Error::EmptySamples => FmStatus::InvalidParameter,
        Error::Unconverged { .. }
        | Error::InvalidSaddleRegion { .. }
        | Error::ConventionError { .. }
        | Error::NonFiniteAction { .. } => FmStatus::Solver,
        Error::RejectionRateExceeded { .. } | Error::Eigendecomposition { .. } => FmStatus::Aborted,
        Error::SingularChannel { .. } | Error::SingularResolvent { .. } => FmStatus::Singular,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FmStatus::Ok,
        Ok(Err(Failure::Model(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(status, msg))) => {
            set_last_error(msg);
            status
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed as `{name}`"));
            FmStatus::NullPointer
        }
        Err(_) => {
            set_last_error("internal panic".into());
            FmStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a channel from `n` modes and two arrays of length `n`.
///
/// # Safety
/// `h0` and `loss` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_new(
    n: usize,
    alpha: f64,
    gamma: f64,
    rho0: f64,
    h0: *const f64,
    loss: *const f64,
    out: *mut *mut FmChannel,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if n > 0 && h0.is_null() {
            return Err(Failure::Null("h0"));
        }
        if n > 0 && loss.is_null() {
            return Err(Failure::Null("loss"));
        }
        let (h0, loss) = if n == 0 {
            (vec![], vec![])
        } else {
            (slice::from_raw_parts(h0, n).to_vec(), slice::from_raw_parts(loss, n).to_vec())
        };
        let params = ChannelParams::new(n, alpha, gamma, rho0)?;
        let profile = DeterministicProfile::new(h0, loss)?;
        profile.check_modes(&params)?;
        *out = Box::into_raw(Box::new(FmChannel {
            params,
            profile,
            solver: SolverSettings::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `channel` must be null or a handle from [`fm_channel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_free(channel: *mut FmChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Switches the saddle solver to gamma continuation.
///
/// # Safety
/// `channel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_set_continuation(channel: *mut FmChannel, enabled: bool) -> FmStatus {
    guard(|| {
        out_ref(channel, "channel")?.solver.continuation = enabled;
        Ok(())
    })
}

/// Effective signal-to-noise ratio `rho = 4 alpha^2 pi^2 rho0`.
///
/// # Safety
/// `channel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_rho(channel: *const FmChannel, out: *mut f64) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(channel, "channel")?.params.rho();
        Ok(())
    })
}

/// Saddle-point mean of the mutual information in nats.
///
/// # Safety
/// `channel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_mean(channel: *const FmChannel, out: *mut f64) -> FmStatus {
    guard(|| {
        let ch = deref(channel, "channel")?;
        let out = out_ref(out, "out")?;
        *out = mean_mutual_information(&ch.profile, &ch.params, &ch.solver)?;
        Ok(())
    })
}

/// Determinant-formula variance. Non-uniform loss falls back to a Monte Carlo
/// covariance with `mc_runs` realizations seeded by `mc_seed`.
///
/// # Safety
/// `channel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_variance(
    channel: *const FmChannel,
    mc_runs: u64,
    mc_seed: u64,
    out: *mut FmVariance,
) -> FmStatus {
    guard(|| {
        let ch = deref(channel, "channel")?;
        let out = out_ref(out, "out")?;
        let settings = VarianceSettings {
            solver: ch.solver,
            mc_runs,
            mc_seed,
            mc_chunks: 1,
            ..Default::default()
        };
        let r = variance(&ch.profile, &ch.params, &settings)?;
        *out = FmVariance {
            var_i1: r.var_i1,
            var_i2: r.var_i2,
            covar: r.covar,
            var_total: r.var_total,
            det_sigma_i1: r.det_sigma_i1,
            det_sigma_i2: r.det_sigma_i2,
            det_sigma_cov: r.det_sigma_cov.unwrap_or(f64::NAN),
            method: match r.method {
                VarianceMethod::Analytic => FmVarianceMethod::Analytic,
                VarianceMethod::FiniteDifference => FmVarianceMethod::FiniteDifference,
                VarianceMethod::MonteCarlo => FmVarianceMethod::MonteCarlo,
            },
        };
        Ok(())
    })
}

/// Mutual information of realization `index` of the run seeded with `seed`;
/// the same value [`fm_ensemble_run`] would draw. Singular draws return
/// `FM_STATUS_SINGULAR`.
///
/// # Safety
/// `channel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_channel_sample(
    channel: *const FmChannel,
    seed: u64,
    index: u64,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        let ch = deref(channel, "channel")?;
        let out = out_ref(out, "out")?;
        match simulate_realization(&ch.params, &ch.profile, realization_seed(seed, index))? {
            Some((i, _, _)) => {
                *out = i;
                Ok(())
            }
            None => Err(Failure::Status(
                FmStatus::Singular,
                format!("realization {index} of seed {seed} is singular"),
            )),
        }
    })
}

/// Runs `runs` realizations split into `chunks` pieces.
///
/// # Safety
/// `channel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_run(
    channel: *const FmChannel,
    runs: u64,
    seed: u64,
    chunks: usize,
    out: *mut *mut FmEnsemble,
) -> FmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let ch = deref(channel, "channel")?;
        let config = RunConfig::new(ch.params, ch.profile.clone(), runs, seed)
            .with_chunks(chunks)
            .with_retain_samples(true);
        let output = run_ensemble(&config)?;
        let samples = output.samples.as_ref().ok_or(Error::EmptySamples)?;
        let cdf = EmpiricalCdf::new(&samples.i)?;
        *out = Box::into_raw(Box::new(FmEnsemble { output, cdf }));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be null or a handle from [`fm_ensemble_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_free(ensemble: *mut FmEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_moments(ensemble: *const FmEnsemble, out: *mut FmMoments) -> FmStatus {
    guard(|| {
        let m = &deref(ensemble, "ensemble")?.output.moments;
        *out_ref(out, "out")? = FmMoments {
            count: m.count,
            rejected: m.rejected,
            mean: m.mean,
            variance: m.variance(),
            std_error: m.std_error(),
            mean_i1: m.mean_i1,
            mean_i2: m.mean_i2,
            var_i1: m.var_i1(),
            var_i2: m.var_i2(),
            cov_i1_i2: m.covariance(),
        };
        Ok(())
    })
}

/// Number of accepted samples; 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_len(ensemble: *const FmEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.cdf.len())
}

/// Copies the accepted samples of `I`, in realization order, into `buf`.
///
/// # Safety
/// `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_samples(ensemble: *const FmEnsemble, buf: *mut f64, len: usize) -> FmStatus {
    guard(|| {
        let e = deref(ensemble, "ensemble")?;
        let samples = &e.output.samples.as_ref().ok_or(Error::EmptySamples)?.i;
        if len < samples.len() {
            return Err(Error::InvalidParameter {
                field: "len",
                reason: format!("buffer holds {len} values, {} needed", samples.len()),
            }
            .into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        slice::from_raw_parts_mut(buf, samples.len()).copy_from_slice(samples);
        Ok(())
    })
}

/// Empirical CDF at `x`.
///
/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_cdf(ensemble: *const FmEnsemble, x: f64, out: *mut f64) -> FmStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(ensemble, "ensemble")?.cdf.eval(x);
        Ok(())
    })
}

/// Kolmogorov-Smirnov distance to `N(mean, var)`; `var` must be positive.
///
/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_ensemble_ks(ensemble: *const FmEnsemble, mean: f64, var: f64, out: *mut f64) -> FmStatus {
    guard(|| {
        let e = deref(ensemble, "ensemble")?;
        let out = out_ref(out, "out")?;
        *out = ks_statistic(&e.cdf, mean, var)?.statistic;
        Ok(())
    })
}
