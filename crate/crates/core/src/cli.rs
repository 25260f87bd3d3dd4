//! Command-line front end: `mc`, `replica`, `compare` and `scattering-check`.
//!
//! Every command prints a JSON document on stdout and, with `--out DIR`, writes
//! it (plus CDF tables where relevant) into `DIR`. Each file embeds the tool
//! version and the fully resolved configuration. Diagnostics go to stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, ProfileShape};
use crate::error::Error;
use crate::hessian::{variance, VarianceReport};
use crate::model::{exact_mean_no_crosstalk, sample_crosstalk, ChannelParams};
use crate::montecarlo::{ks_statistic, normal_cdf, realization_seed, run_ensemble, EmpiricalCdf, EnsembleOutput};
use crate::replica::{replica_mean, ReplicaMean};
use crate::scattering::{
    build_approx_s, build_exact_s, flux_balance_deviation, max_abs, max_singular_value, unitarity_deviation,
    verify_gram_identity, BlockHamiltonian, CouplingMatrix, LossBlock,
};
use crate::VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_AGREEMENT: i32 = 5;

/// `|analytic mean - MC mean| <= MEAN_SE_FACTOR * SE`.
pub const MEAN_SE_FACTOR: f64 = 3.0;
/// `|analytic var - MC var| / MC var <= VARIANCE_REL_TOL`.
pub const VARIANCE_REL_TOL: f64 = 0.05;
/// KS distance to `N(analytic mean, analytic var)`.
pub const KS_TOL: f64 = 0.01;
/// Below this a variance counts as zero (deterministic channel).
pub const ZERO_VARIANCE_TOL: f64 = 1e-10;

pub const UNITARITY_TOL: f64 = 1e-12;
pub const GRAM_TOL: f64 = 1e-10;
pub const FLUX_TOL: f64 = 1e-10;
pub const SCATTERING_SIZES: [usize; 3] = [2, 4, 8];
pub const ALPHA_SWEEP: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Parser)]
#[command(name = "fibermimo", version, about = "Fiber MIMO channel as a lossy chaotic cavity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo ensemble: moments and empirical CDF of the mutual information.
    Mc(CommonArgs),
    /// Saddle-point mean and determinant variance.
    Replica(CommonArgs),
    /// Monte Carlo against the analytic Gaussian; exit 5 on disagreement.
    Compare(CompareArgs),
    /// Unitarity, flux balance, Gram identity and approximation gap of S.
    ScatteringCheck(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Detuning profile: `X`, `const:X`, `linspace:A:B` or `list:A,B,...`.
    #[arg(long, value_name = "PROFILE")]
    pub h0: Option<ProfileShape>,
    /// Loss profile, same syntax as `--h0`.
    #[arg(long, value_name = "PROFILE")]
    pub loss: Option<ProfileShape>,
    #[arg(long)]
    pub runs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chunks: Option<usize>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Reach the target gamma by continuation from 0.
    #[arg(long)]
    pub continuation: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub cdf_points: Option<usize>,
    /// Random H draws per size (scattering-check).
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Test hook: multiply the analytic variance before comparing.
    #[arg(long, hide = true)]
    pub inject_variance_scale: Option<f64>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        apply!(n => n, alpha => alpha, gamma => gamma, rho0 => rho0, h0 => h0, loss => loss,
               runs => runs, seed => seed, chunks => chunks, cdf_points => cdf_points,
               draws => scattering_draws);
        if let Some(t) = self.threads {
            c.threads = Some(t);
        }
        if let Some(m) = self.max_iter {
            c.solver.max_iter = m;
        }
        if self.continuation {
            c.solver.continuation = true;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidMasks { .. }
        | Error::UnsupportedProfile(_) => EXIT_CONFIG,
        Error::RejectionRateExceeded { .. } | Error::Eigendecomposition { .. } => EXIT_ABORTED,
        Error::Unconverged { .. }
        | Error::InvalidSaddleRegion { .. }
        | Error::ConventionError { .. }
        | Error::NonFiniteAction { .. } => EXIT_SOLVER,
        Error::SingularChannel { .. } | Error::SingularResolvent { .. } | Error::EmptySamples => EXIT_RUNTIME,
    }
}

#[derive(Debug)]
enum Failure {
    Model(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (common, inject) = match &cli.command {
        Command::Mc(a) | Command::Replica(a) | Command::ScatteringCheck(a) => (a, None),
        Command::Compare(a) => (&a.common, a.inject_variance_scale),
    };
    let config = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = common.out.as_deref();
    let body = || match &cli.command {
        Command::Mc(_) => cmd_mc(&config, out),
        Command::Replica(_) => cmd_replica(&config, out),
        Command::Compare(_) => cmd_compare(&config, out, inject),
        Command::ScatteringCheck(_) => cmd_scattering_check(&config, out),
    };
    let result = match config.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(body),
            Err(e) => Err(Failure::Io(format!("thread pool: {e}"))),
        },
        None => body(),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a ExperimentConfig,
    result: T,
}

fn to_json<T: Serialize>(command: &'static str, config: &ExperimentConfig, result: T) -> Result<String, Failure> {
    let env = Envelope {
        tool: "fibermimo",
        version: VERSION,
        command,
        config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn csv_header(command: &str, config: &ExperimentConfig, columns: &str) -> Result<String, Failure> {
    let json = serde_json::to_string(config).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(format!("# fibermimo {VERSION} {command}\n# config: {json}\n{columns}\n"))
}

fn emit(out: Option<&Path>, files: &[(&str, &str)], stdout: &str) -> Result<(), Failure> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        for (name, contents) in files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        }
    }
    print!("{stdout}");
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McSummary {
    pub count: u64,
    pub rejected: u64,
    pub attempted: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub var_i1: f64,
    pub var_i2: f64,
    pub cov_i1_i2: f64,
    pub min: f64,
    pub max: f64,
    /// KS distance to the Gaussian with the sample moments; null for zero variance.
    pub ks_statistic: Option<f64>,
    pub seed: u64,
    pub chunks: usize,
}

fn mc_summary(out: &EnsembleOutput, cdf: &EmpiricalCdf, config: &ExperimentConfig) -> Result<McSummary, Error> {
    let m = &out.moments;
    let ks = if m.variance() > ZERO_VARIANCE_TOL {
        Some(ks_statistic(cdf, m.mean, m.variance())?.statistic)
    } else {
        None
    };
    Ok(McSummary {
        count: m.count,
        rejected: m.rejected,
        attempted: m.attempted(),
        mean: m.mean,
        variance: m.variance(),
        std_error: m.std_error(),
        mean_i1: m.mean_i1,
        mean_i2: m.mean_i2,
        var_i1: m.var_i1(),
        var_i2: m.var_i2(),
        cov_i1_i2: m.covariance(),
        min: cdf.min(),
        max: cdf.max(),
        ks_statistic: ks,
        seed: config.seed,
        chunks: config.chunks,
    })
}

fn run_mc(config: &ExperimentConfig) -> Result<(EnsembleOutput, EmpiricalCdf), Error> {
    let run = config.run_config()?.with_retain_samples(true);
    let out = run_ensemble(&run)?;
    let samples = out.samples.as_ref().ok_or(Error::EmptySamples)?;
    let cdf = EmpiricalCdf::new(&samples.i)?;
    Ok((out, cdf))
}

pub fn cmd_mc_summary(config: &ExperimentConfig) -> Result<(McSummary, EmpiricalCdf), Error> {
    let (out, cdf) = run_mc(config)?;
    Ok((mc_summary(&out, &cdf, config)?, cdf))
}

fn log_mc(s: &McSummary) {
    eprintln!(
        "mc: {} realizations ({} rejected), mean {:.6}, variance {:.6}",
        s.count, s.rejected, s.mean, s.variance
    );
}

fn cmd_mc(config: &ExperimentConfig, out: Option<&Path>) -> Result<i32, Failure> {
    let (summary, cdf) = cmd_mc_summary(config)?;
    log_mc(&summary);
    let json = to_json("mc", config, summary)?;
    let mut csv = csv_header("mc", config, "value,cdf_empirical,cdf_gaussian")?;
    for x in cdf.grid(config.cdf_points) {
        let _ = writeln!(
            csv,
            "{x},{},{}",
            cdf.eval(x),
            normal_cdf(x, summary.mean, summary.variance)
        );
    }
    emit(out, &[("mc_summary.json", &json), ("mc_cdf.csv", &csv)], &json)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReplicaOutput {
    pub saddles: ReplicaMean,
    pub mean: f64,
    /// Crosstalk-free closed form, for reference.
    pub mean_no_crosstalk: f64,
    pub variance: VarianceReport,
}

pub fn replica_output(config: &ExperimentConfig) -> Result<ReplicaOutput, Error> {
    let params = config.params()?;
    let profile = config.profile()?;
    let saddles = replica_mean(&profile, &params, &config.solver)?;
    let variance = variance(&profile, &params, &config.variance_settings())?;
    Ok(ReplicaOutput {
        saddles,
        mean: saddles.mean,
        mean_no_crosstalk: exact_mean_no_crosstalk(&profile, params.rho())?,
        variance,
    })
}

fn cmd_replica(config: &ExperimentConfig, out: Option<&Path>) -> Result<i32, Failure> {
    let result = replica_output(config)?;
    eprintln!(
        "replica: mean {:.6} (I1 {} iterations, residual {:e}; I2 {} iterations, residual {:e}), variance {:.6}",
        result.mean,
        result.saddles.i1.iterations,
        result.saddles.i1.residual,
        result.saddles.i2.iterations,
        result.saddles.i2.residual,
        result.variance.var_total
    );
    let json = to_json("replica", config, result)?;
    emit(out, &[("replica.json", &json)], &json)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Agreement {
    pub mean_delta: f64,
    pub mean_tolerance: f64,
    pub mean_ok: bool,
    pub variance_rel_delta: Option<f64>,
    pub variance_ok: bool,
    /// KS distance to `N(analytic mean, analytic var)`.
    pub ks_analytic: f64,
    /// KS distance to `N(MC mean, MC var)`; null for a deterministic channel.
    pub ks_mc: Option<f64>,
    pub ks_ok: bool,
    /// Zero-variance channel, compared sample by sample instead of by KS.
    pub degenerate: bool,
    pub pass: bool,
}

/// Applies the agreement thresholds to Monte Carlo and analytic moments.
pub fn agreement(mc: &McSummary, cdf: &EmpiricalCdf, mean: f64, var: f64) -> Result<Agreement, Error> {
    let mean_delta = mean - mc.mean;
    let mean_tolerance = (MEAN_SE_FACTOR * mc.std_error).max(ZERO_VARIANCE_TOL);
    let mean_ok = mean_delta.abs() <= mean_tolerance;
    let (variance_rel_delta, variance_ok) = if mc.variance > ZERO_VARIANCE_TOL {
        let rel = (var - mc.variance).abs() / mc.variance;
        (Some(rel), rel <= VARIANCE_REL_TOL)
    } else {
        (None, var.abs() <= ZERO_VARIANCE_TOL)
    };
    let degenerate = var <= ZERO_VARIANCE_TOL;
    let ks_analytic = if degenerate {
        // Exact match: every sample sits on the analytic mean.
        let spread = (cdf.min() - mean).abs().max((cdf.max() - mean).abs());
        if spread <= ZERO_VARIANCE_TOL {
            0.0
        } else {
            1.0
        }
    } else {
        ks_statistic(cdf, mean, var)?.statistic
    };
    let ks_ok = ks_analytic <= KS_TOL;
    Ok(Agreement {
        mean_delta,
        mean_tolerance,
        mean_ok,
        variance_rel_delta,
        variance_ok,
        ks_analytic,
        ks_mc: mc.ks_statistic,
        ks_ok,
        degenerate,
        pass: mean_ok && variance_ok && ks_ok,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct CompareOutput {
    mc: McSummary,
    analytic: ReplicaOutput,
    analytic_variance_used: f64,
    variance_injection: Option<f64>,
    agreement: Agreement,
}

fn cmd_compare(config: &ExperimentConfig, out: Option<&Path>, inject: Option<f64>) -> Result<i32, Failure> {
    let analytic = replica_output(config)?;
    let (mc, cdf) = cmd_mc_summary(config)?;
    log_mc(&mc);
    let var = analytic.variance.var_total * inject.unwrap_or(1.0);
    let agreement = agreement(&mc, &cdf, analytic.mean, var)?;
    eprintln!(
        "compare: mean delta {:e} (tolerance {:e}), variance rel delta {:?}, KS {:.5}: {}",
        agreement.mean_delta,
        agreement.mean_tolerance,
        agreement.variance_rel_delta,
        agreement.ks_analytic,
        if agreement.pass { "agree" } else { "DISAGREE" }
    );
    let result = CompareOutput {
        mc,
        analytic,
        analytic_variance_used: var,
        variance_injection: inject,
        agreement,
    };
    let json = to_json("compare", config, result)?;
    let mut csv = csv_header(
        "compare",
        config,
        "value,cdf_empirical,cdf_gaussian_analytic,cdf_gaussian_mc",
    )?;
    for x in cdf.grid(config.cdf_points) {
        let _ = writeln!(
            csv,
            "{x},{},{},{}",
            cdf.eval(x),
            normal_cdf(x, analytic.mean, var),
            normal_cdf(x, mc.mean, mc.variance)
        );
    }
    emit(out, &[("compare_summary.json", &json), ("compare_cdf.csv", &csv)], &json)?;
    Ok(if agreement.pass { EXIT_OK } else { EXIT_AGREEMENT })
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeCheck {
    pub n: usize,
    pub draws: usize,
    pub lossless_unitarity: f64,
    pub flux_balance: f64,
    /// Largest singular value of the lossy `S`; informational.
    pub lossy_max_singular_value: f64,
    pub gram_deviation: f64,
    pub gram_asserted: bool,
    /// `(alpha, max |S_exact - S_approx|)`.
    pub approximation_gap: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScatteringReport {
    pub sizes: Vec<SizeCheck>,
    pub unitarity_ok: bool,
    pub flux_balance_ok: bool,
    pub gram_ok: bool,
    pub gap_monotone: bool,
    pub pass: bool,
}

/// Random Hermitian `H` draws at each size, checked against the identities
/// of the scattering construction.
pub fn scattering_report(config: &ExperimentConfig, sizes: &[usize]) -> Result<ScatteringReport, Error> {
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let loss = config.loss.expand(n, "loss")?;
        let uniform = loss.windows(2).all(|w| w[0] == w[1]);
        let params = ChannelParams::new(n, config.alpha, config.gamma, config.rho0)?;
        let w = CouplingMatrix::perfect(n, config.alpha)?;
        let loss_block = LossBlock::from_diag(&loss)?;
        let mut rng = ChaCha8Rng::seed_from_u64(realization_seed(config.seed, n as u64));
        let mut check = SizeCheck {
            n,
            draws: config.scattering_draws,
            lossless_unitarity: 0.0,
            flux_balance: 0.0,
            lossy_max_singular_value: 0.0,
            gram_deviation: 0.0,
            gram_asserted: uniform,
            approximation_gap: ALPHA_SWEEP.iter().map(|&a| (a, 0.0)).collect(),
        };
        for _ in 0..config.scattering_draws {
            let g = sample_crosstalk(n, &mut rng);
            let hm = g.entries().clone();
            let h = BlockHamiltonian::new(hm.clone())?;
            let s = build_exact_s(&h, &w, None)?;
            check.lossless_unitarity = check.lossless_unitarity.max(unitarity_deviation(&s));
            check.flux_balance = check.flux_balance.max(flux_balance_deviation(&h, config.alpha, &loss_block)?);
            let lossy = build_exact_s(&h, &w, Some(&loss_block))?;
            check.lossy_max_singular_value = check.lossy_max_singular_value.max(max_singular_value(&lossy));
            check.gram_deviation = check.gram_deviation.max(verify_gram_identity(&hm, &loss, &params)?);
            for (alpha, gap) in check.approximation_gap.iter_mut() {
                let wa = CouplingMatrix::perfect(n, *alpha)?;
                let exact = build_exact_s(&h, &wa, Some(&loss_block))?;
                let approx = build_approx_s(&h, &wa, Some(&loss_block))?;
                *gap = gap.max(max_abs(&(exact - approx)));
            }
        }
        out.push(check);
    }
    let unitarity_ok = out.iter().all(|c| c.lossless_unitarity <= UNITARITY_TOL);
    let flux_balance_ok = out.iter().all(|c| c.flux_balance <= FLUX_TOL);
    let gram_ok = out.iter().all(|c| !c.gram_asserted || c.gram_deviation <= GRAM_TOL);
    let gap_monotone = out
        .iter()
        .all(|c| c.approximation_gap.windows(2).all(|w| w[1].1 < w[0].1));
    Ok(ScatteringReport {
        pass: unitarity_ok && flux_balance_ok && gram_ok && gap_monotone,
        sizes: out,
        unitarity_ok,
        flux_balance_ok,
        gram_ok,
        gap_monotone,
    })
}

fn cmd_scattering_check(config: &ExperimentConfig, out: Option<&Path>) -> Result<i32, Failure> {
    let report = scattering_report(config, &SCATTERING_SIZES)?;
    for c in &report.sizes {
        eprintln!(
            "scattering: N={} unitarity {:e}, flux balance {:e}, gram {:e}{}",
            c.n,
            c.lossless_unitarity,
            c.flux_balance,
            c.gram_deviation,
            if c.gram_asserted { "" } else { " (informational)" }
        );
    }
    let pass = report.pass;
    let json = to_json("scattering-check", config, report)?;
    emit(out, &[("scattering_check.json", &json)], &json)?;
    Ok(if pass { EXIT_OK } else { EXIT_AGREEMENT })
}
