//! Channel parameters, the deterministic and random channel pieces, and the
//! per-realization mutual information.
//!
//! A realization is summarized by the Hermitian Gram matrix
//! `M = (H0 + gamma*G)^2 + Gamma^2`, whose eigenvalues determine
//! `I = ln det(M + rho) - ln det(M)`. All information quantities are in nats.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Eigenvalues of `M` within this distance below zero are clamped to zero.
pub const EPS_PSD: f64 = 1e-10;
/// Eigenvalues of `M` at or below this value make a realization singular.
pub const EPS_SING: f64 = 1e-12;

fn require_finite(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field,
            reason: format!("must be finite, got {value}"),
        })
    }
}

/// Effective SNR `rho = 4 alpha^2 pi^2 rho0`.
pub fn derive_rho(alpha: f64, rho0: f64) -> Result<f64> {
    require_finite("alpha", alpha)?;
    require_finite("rho0", rho0)?;
    if alpha <= 0.0 {
        return Err(Error::InvalidParameter {
            field: "alpha",
            reason: format!("must be > 0, got {alpha}"),
        });
    }
    if rho0 < 0.0 {
        return Err(Error::InvalidParameter {
            field: "rho0",
            reason: format!("must be >= 0, got {rho0}"),
        });
    }
    Ok(4.0 * alpha * alpha * PI * PI * rho0)
}

/// Scalar physics knobs. `rho` is derived on demand and never stored.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ChannelParams {
    n_modes: usize,
    alpha: f64,
    gamma: f64,
    rho0: f64,
}

#[derive(Deserialize)]
struct RawParams {
    n_modes: usize,
    alpha: f64,
    gamma: f64,
    rho0: f64,
}

impl TryFrom<RawParams> for ChannelParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        ChannelParams::new(raw.n_modes, raw.alpha, raw.gamma, raw.rho0)
    }
}

impl ChannelParams {
    pub fn new(n_modes: usize, alpha: f64, gamma: f64, rho0: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidParameter {
                field: "n",
                reason: "must be >= 1".into(),
            });
        }
        require_finite("gamma", gamma)?;
        if gamma < 0.0 {
            return Err(Error::InvalidParameter {
                field: "gamma",
                reason: format!("must be >= 0, got {gamma}"),
            });
        }
        derive_rho(alpha, rho0)?;
        Ok(Self {
            n_modes,
            alpha,
            gamma,
            rho0,
        })
    }

    /// Parameters with `alpha = 1/(2 pi)`, so that `rho == rho0`.
    pub fn with_unit_coupling(n_modes: usize, gamma: f64, rho0: f64) -> Result<Self> {
        Self::new(n_modes, 0.5 / PI, gamma, rho0)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho(&self) -> f64 {
        4.0 * self.alpha * self.alpha * PI * PI * self.rho0
    }

    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        Self::new(self.n_modes, self.alpha, gamma, self.rho0)
    }

    pub fn with_rho0(self, rho0: f64) -> Result<Self> {
        Self::new(self.n_modes, self.alpha, self.gamma, rho0)
    }
}

impl Serialize for ChannelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("ChannelParams", 5)?;
        s.serialize_field("n_modes", &self.n_modes)?;
        s.serialize_field("alpha", &self.alpha)?;
        s.serialize_field("gamma", &self.gamma)?;
        s.serialize_field("rho0", &self.rho0)?;
        s.serialize_field("rho", &self.rho())?;
        s.end()
    }
}

/// Diagonals of the line-of-sight matrix `H0` and the loss matrix `Gamma`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicProfile {
    h0_diag: Vec<f64>,
    gamma_diag: Vec<f64>,
}

impl DeterministicProfile {
    pub fn new(h0_diag: Vec<f64>, gamma_diag: Vec<f64>) -> Result<Self> {
        if h0_diag.len() != gamma_diag.len() {
            return Err(Error::DimensionMismatch {
                expected: h0_diag.len(),
                actual: gamma_diag.len(),
                context: "loss profile length",
            });
        }
        for &h in &h0_diag {
            require_finite("h0", h)?;
        }
        for &g in &gamma_diag {
            require_finite("loss", g)?;
            if g < 0.0 {
                return Err(Error::InvalidParameter {
                    field: "loss",
                    reason: format!("loss entries must be >= 0, got {g}"),
                });
            }
        }
        Ok(Self {
            h0_diag,
            gamma_diag,
        })
    }

    pub fn uniform(n: usize, h0: f64, loss: f64) -> Result<Self> {
        Self::new(vec![h0; n], vec![loss; n])
    }

    pub fn len(&self) -> usize {
        self.h0_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h0_diag.is_empty()
    }

    pub fn h0(&self) -> &[f64] {
        &self.h0_diag
    }

    pub fn loss(&self) -> &[f64] {
        &self.gamma_diag
    }

    /// True when `Gamma` is a multiple of the identity.
    pub fn has_uniform_loss(&self) -> bool {
        self.gamma_diag.windows(2).all(|w| w[0] == w[1])
    }

    pub fn check_modes(&self, params: &ChannelParams) -> Result<()> {
        if self.len() != params.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: params.n_modes(),
                actual: self.len(),
                context: "profile length vs n_modes",
            });
        }
        Ok(())
    }
}

/// Hermitian crosstalk matrix `G` with weight `exp(-(N/2) Tr G^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkMatrix {
    entries: DMatrix<Complex64>,
}

impl CrosstalkMatrix {
    /// Wraps an explicit matrix; it must be Hermitian to `1e-12`.
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                actual: entries.ncols(),
                context: "crosstalk matrix must be square",
            });
        }
        let dev = (&entries - entries.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::InvalidParameter {
                field: "crosstalk",
                reason: format!("matrix is not Hermitian (deviation {dev:e})"),
            });
        }
        Ok(Self { entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Conjugates by a unitary: `G -> V G V^dagger`.
    pub fn rotated(&self, v: &DMatrix<Complex64>) -> Self {
        let rotated = v * &self.entries * v.adjoint();
        Self {
            entries: (&rotated + rotated.adjoint()).scale(0.5),
        }
    }
}

/// Draws `G`: real `N(0, 1/N)` diagonal, off-diagonal real and imaginary parts
/// `N(0, 1/(2N))`, upper triangle sampled row by row and mirrored.
pub fn sample_crosstalk<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CrosstalkMatrix {
    let diag_sd = (1.0 / n as f64).sqrt();
    let off_sd = (0.5 / n as f64).sqrt();
    let mut g = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        g[(i, i)] = Complex64::new(diag_sd * d, 0.0);
        for j in (i + 1)..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(off_sd * re, off_sd * im);
            g[(i, j)] = z;
            g[(j, i)] = z.conj();
        }
    }
    CrosstalkMatrix { entries: g }
}

/// `M = (H0 + gamma G)^2 + Gamma^2` with its ascending spectrum.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    m: DMatrix<Complex64>,
    eigenvalues: Vec<f64>,
    min_raw_eigenvalue: f64,
}

impl ChannelRealization {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest eigenvalue before clamping.
    pub fn min_raw_eigenvalue(&self) -> f64 {
        self.min_raw_eigenvalue
    }

    /// Builds a realization directly from a spectrum; used for closed-form checks.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "eigenvalues",
                reason: "must be finite".into(),
            });
        }
        eigenvalues.sort_by(f64::total_cmp);
        let min_raw = eigenvalues.first().copied().unwrap_or(0.0);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            eigenvalues.len(),
            eigenvalues.iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        Ok(Self {
            m,
            eigenvalues,
            min_raw_eigenvalue: min_raw,
        })
    }
}

pub fn build_effective_matrix(
    profile: &DeterministicProfile,
    g: &CrosstalkMatrix,
    params: &ChannelParams,
) -> Result<ChannelRealization> {
    let n = params.n_modes();
    profile.check_modes(params)?;
    if g.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: g.n(),
            context: "crosstalk matrix size vs n_modes",
        });
    }
    let gamma = params.gamma();
    let mut k = g.entries().scale(gamma);
    for (i, &h) in profile.h0().iter().enumerate() {
        k[(i, i)] += Complex64::new(h, 0.0);
    }
    let mut m = &k * &k;
    for (i, &l) in profile.loss().iter().enumerate() {
        m[(i, i)] += Complex64::new(l * l, 0.0);
    }
    let m = (&m + m.adjoint()).scale(0.5);

    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::Eigendecomposition { seed: 0 })?;
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let min_raw_eigenvalue = eigenvalues[0];
    for mu in eigenvalues.iter_mut() {
        if *mu < 0.0 && *mu >= -EPS_PSD {
            *mu = 0.0;
        }
    }
    Ok(ChannelRealization {
        m,
        eigenvalues,
        min_raw_eigenvalue,
    })
}

fn check_rho(rho: f64) -> Result<()> {
    require_finite("rho", rho)?;
    if rho < 0.0 {
        return Err(Error::InvalidParameter {
            field: "rho",
            reason: format!("must be >= 0, got {rho}"),
        });
    }
    Ok(())
}

fn check_nonsingular(eigenvalues: &[f64]) -> Result<()> {
    match eigenvalues.iter().position(|&mu| mu <= EPS_SING) {
        Some(index) => Err(Error::SingularChannel {
            index,
            eigenvalue: eigenvalues[index],
        }),
        None => Ok(()),
    }
}

/// `I = sum_k ln(1 + rho/mu_k)` in nats.
pub fn mutual_information(real: &ChannelRealization, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    check_nonsingular(&real.eigenvalues)?;
    Ok(real.eigenvalues.iter().map(|&mu| (rho / mu).ln_1p()).sum())
}

/// `(I1, I2) = (ln det(M + rho), ln det M)` for one realization.
pub fn log_det_pair(real: &ChannelRealization, rho: f64) -> Result<(f64, f64)> {
    check_rho(rho)?;
    check_nonsingular(&real.eigenvalues)?;
    let i1 = real.eigenvalues.iter().map(|&mu| (mu + rho).ln()).sum();
    let i2 = real.eigenvalues.iter().map(|&mu| mu.ln()).sum();
    Ok((i1, i2))
}

/// Mutual information of the crosstalk-free channel (`gamma = 0`), which is deterministic.
pub fn exact_mean_no_crosstalk(profile: &DeterministicProfile, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let mut total = 0.0;
    for (index, (&h, &l)) in profile.h0().iter().zip(profile.loss()).enumerate() {
        let mu = h * h + l * l;
        if rho == 0.0 {
            continue;
        }
        if mu == 0.0 {
            return Err(Error::SingularChannel {
                index,
                eigenvalue: mu,
            });
        }
        total += (rho / mu).ln_1p();
    }
    Ok(total)
}
