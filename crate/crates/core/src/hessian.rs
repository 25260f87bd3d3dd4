//! Gaussian fluctuations around the replica saddle: 4x4 Hessians of the action
//! and the variance of the mutual information built from their determinants.
//!
//! Single-variant action, fluctuation coordinates `(t, r, p, q)`:
//!
//! ```text
//! S(t, r, p, q) = -N (t r - p^2 - q^2)
//!               + sum_k ln[(Delta_k + gamma t)(1 + gamma r) + (h_k - gamma p)^2 - gamma^2 q^2]
//! ```
//!
//! The coupled action of an `I1` replica and an `I2` replica is written with 2x2
//! replica matrices `T = diag(t1, t2) + tau Rs`, `R = diag(r1, r2) + rho_c Rs`,
//! `P = diag(p1, p2) + pi Rs`, `Q = kappa Ra`, where `Rs` and `Ra` are the unit
//! Frobenius symmetric and antisymmetric off-diagonal generators:
//!
//! ```text
//! S = -N Tr(T R - P^2 - Q^2) + sum_k ln |det A_k|
//! A_k = [[Delta_k + gamma T, i(h_k - gamma(P + Q))], [i(h_k - gamma(P - Q)), 1 + gamma R]]
//! ```
//!
//! Its Hessian in the cross coordinates `(tau, rho_c, pi, kappa)` at the
//! block-diagonal saddle is the covariance Hessian.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ChannelParams, DeterministicProfile};
use crate::montecarlo::{joint_covariance, run_ensemble, RunConfig};
use crate::replica::{solve_variant, SaddleSolution, SaddleVariant, SolverSettings, VariantKind};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// The Richardson partner step is `step / RICHARDSON_RATIO`.
pub const RICHARDSON_RATIO: f64 = 10.0;
pub const FD_STEP_RANGE: (f64, f64) = (1e-6, 1e-3);
/// Additive constant of the variance formula under unit-norm cross coordinates.
pub const VARIANCE_OFFSET: f64 = 0.0;
/// The `4 ln 2` offset found in the published form of the variance, kept for diagnostics.
pub const CANDIDATE_VARIANCE_OFFSET: f64 = 4.0 * LN_2;
/// Slack below zero tolerated (and clamped) in the assembled variance.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianTag {
    I1,
    I2,
    Cross,
}

impl From<VariantKind> for HessianTag {
    fn from(kind: VariantKind) -> Self {
        match kind {
            VariantKind::I1 => HessianTag::I1,
            VariantKind::I2 => HessianTag::I2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hessian4 {
    pub entries: [[f64; 4]; 4],
    pub tag: HessianTag,
}

impl Hessian4 {
    pub fn det(&self) -> f64 {
        Matrix4::from_fn(|i, j| self.entries[i][j]).determinant()
    }

    pub fn log_abs_det(&self) -> f64 {
        self.det().abs().ln()
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Hessian4) -> f64 {
        let mut m = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                m = m.max((self.entries[i][j] - other.entries[i][j]).abs());
            }
        }
        m
    }

    /// `true` when row and column 4 vanish apart from the diagonal entry.
    pub fn q_decoupled(&self, tol: f64) -> bool {
        (0..3).all(|i| self.entries[i][3].abs() <= tol && self.entries[3][i].abs() <= tol)
    }
}

/// `|det|` of every Hessian at `gamma = 0`: `N^2 (2N)^2`.
pub fn reference_log_det(n: usize) -> f64 {
    (4.0 * (n as f64).powi(4)).ln()
}

fn require_converged(solution: &SaddleSolution) -> Result<()> {
    if solution.converged {
        Ok(())
    } else {
        Err(Error::Unconverged {
            residual: solution.residual,
            iterations: solution.iterations,
        })
    }
}

/// Per-mode `(A, B, b, Z)` with `A = 1 + gamma r`, `B = Delta + gamma t`, `b = h - gamma p`.
fn saddle_terms(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
) -> Result<Vec<[f64; 4]>> {
    profile.check_modes(params)?;
    let gamma = params.gamma();
    let terms: Vec<[f64; 4]> = variant
        .delta()
        .iter()
        .zip(profile.h0())
        .map(|(&delta, &h)| {
            let a = 1.0 + gamma * solution.r;
            let bb = delta + gamma * solution.t;
            let b = h - gamma * solution.p;
            [a, bb, b, a * bb + b * b]
        })
        .collect();
    if let Some((index, t)) = terms.iter().enumerate().find(|(_, t)| !(t[3] > 0.0)) {
        return Err(Error::InvalidSaddleRegion { index, value: t[3] });
    }
    Ok(terms)
}

/// Closed-form Hessian of the single-variant action at a converged saddle.
pub fn sigma_analytic(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
) -> Result<Hessian4> {
    require_converged(solution)?;
    let g2 = params.gamma() * params.gamma();
    let n = profile.len() as f64;
    let mut s = [[0.0; 4]; 4];
    for [a, bb, b, z] in saddle_terms(variant, profile, params, solution)? {
        let z2 = z * z;
        s[0][0] -= g2 * a * a / z2;
        s[0][1] += g2 * b * b / z2;
        s[0][2] += 2.0 * g2 * a * b / z2;
        s[1][1] -= g2 * bb * bb / z2;
        s[1][2] += 2.0 * g2 * bb * b / z2;
        s[2][2] += 2.0 * g2 / z - 4.0 * g2 * b * b / z2;
        s[3][3] -= 2.0 * g2 / z;
    }
    s[0][1] -= n;
    s[2][2] += 2.0 * n;
    s[3][3] += 2.0 * n;
    s[1][0] = s[0][1];
    s[2][0] = s[0][2];
    s[2][1] = s[1][2];
    Ok(Hessian4 {
        entries: s,
        tag: variant.kind().into(),
    })
}

/// The textbook Hessian table entry by entry, kept as a reference.
///
/// Differs from [`sigma_analytic`] in the antisymmetric (1,2)/(2,1) pair, the
/// sign of the `AB` and `2 gamma^2 / Z` terms, and the sign of the (1,3)/(2,3)
/// couplings.
pub fn sigma_transcribed(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
) -> Result<Hessian4> {
    require_converged(solution)?;
    let g2 = params.gamma() * params.gamma();
    let n = profile.len() as f64;
    let mut s = [[0.0; 4]; 4];
    for [a, bb, b, z] in saddle_terms(variant, profile, params, solution)? {
        let z2 = z * z;
        s[0][0] -= g2 * a * a / z2;
        s[0][1] -= g2 * a * bb / z2 + g2 / z;
        s[0][2] -= 2.0 * g2 * a * b / z2;
        s[1][1] -= g2 * bb * bb / z2;
        s[1][2] -= 2.0 * g2 * bb * b / z2;
        s[2][2] -= 4.0 * g2 * b * b / z2 + 2.0 * g2 / z;
        s[3][3] -= 2.0 * g2 / z;
    }
    s[0][1] += n;
    s[2][2] += 2.0 * n;
    s[3][3] += 2.0 * n;
    s[1][0] = -s[0][1];
    s[2][0] = s[0][2];
    s[2][1] = s[1][2];
    Ok(Hessian4 {
        entries: s,
        tag: variant.kind().into(),
    })
}

/// Scalar action over four order parameters.
pub trait ActionEvaluator {
    fn tag(&self) -> HessianTag;
    /// Action value; non-finite outside the admissible region.
    fn eval(&self, x: [f64; 4]) -> f64;
    /// `S(at + dx) - S(at)`. Implementations override this when the difference
    /// can be formed without cancelling two O(1) action values.
    fn eval_difference(&self, at: [f64; 4], dx: [f64; 4]) -> f64 {
        let mut x = at;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        self.eval(x) - self.eval(at)
    }
}

/// `ln|1 + s|`, accurate for small `s`.
fn ln_abs_1p(s: f64) -> f64 {
    if s > -1.0 {
        s.ln_1p()
    } else {
        (1.0 + s).abs().ln()
    }
}

/// `det(I + K) - 1` from power traces via Newton's identities.
fn det_identity_plus_minus_one(k: &Matrix4<f64>) -> f64 {
    let k2 = k * k;
    let k3 = k2 * k;
    let (p1, p2, p3, p4) = (k.trace(), k2.trace(), k3.trace(), (k3 * k).trace());
    let e1 = p1;
    let e2 = (e1 * p1 - p2) / 2.0;
    let e3 = (e2 * p1 - e1 * p2 + p3) / 3.0;
    let e4 = (e3 * p1 - e2 * p2 + e1 * p3 - p4) / 4.0;
    e1 + e2 + e3 + e4
}

/// Wraps a closure, mainly for tests and custom actions.
pub struct FnAction<F> {
    pub tag: HessianTag,
    pub f: F,
}

impl<F: Fn([f64; 4]) -> f64> ActionEvaluator for FnAction<F> {
    fn tag(&self) -> HessianTag {
        self.tag
    }

    fn eval(&self, x: [f64; 4]) -> f64 {
        (self.f)(x)
    }
}

/// Single-variant action in `(t, r, p, q)`.
#[derive(Debug, Clone)]
pub struct SingleAction {
    kind: VariantKind,
    delta: Vec<f64>,
    h0: Vec<f64>,
    gamma: f64,
}

impl SingleAction {
    pub fn new(variant: &SaddleVariant, profile: &DeterministicProfile, params: &ChannelParams) -> Result<Self> {
        profile.check_modes(params)?;
        Ok(Self {
            kind: variant.kind(),
            delta: variant.delta().to_vec(),
            h0: profile.h0().to_vec(),
            gamma: params.gamma(),
        })
    }
}

impl ActionEvaluator for SingleAction {
    fn tag(&self) -> HessianTag {
        self.kind.into()
    }

    fn eval(&self, [t, r, p, q]: [f64; 4]) -> f64 {
        let g = self.gamma;
        let n = self.h0.len() as f64;
        let mut s = -n * (t * r - p * p - q * q);
        for (&delta, &h) in self.delta.iter().zip(&self.h0) {
            let b = h - g * p;
            let z = (delta + g * t) * (1.0 + g * r) + b * b - g * g * q * q;
            if !(z > 0.0) {
                return f64::NAN;
            }
            s += z.ln();
        }
        s
    }

    fn eval_difference(&self, [t, r, p, q]: [f64; 4], [dt, dr, dp, dq]: [f64; 4]) -> f64 {
        let g = self.gamma;
        let n = self.h0.len() as f64;
        let mut s = -n * (t * dr + r * dt + dt * dr - 2.0 * p * dp - dp * dp - 2.0 * q * dq - dq * dq);
        for (&delta, &h) in self.delta.iter().zip(&self.h0) {
            let (a, bb, b) = (1.0 + g * r, delta + g * t, h - g * p);
            let z = a * bb + b * b - g * g * q * q;
            let dz = g * dt * a + g * dr * bb + g * g * dt * dr - 2.0 * g * b * dp + g * g * dp * dp
                - g * g * (2.0 * q * dq + dq * dq);
            if !(z > 0.0 && z + dz > 0.0) {
                return f64::NAN;
            }
            s += (dz / z).ln_1p();
        }
        s
    }
}

/// Coupled `I1`/`I2` action in the cross coordinates `(tau, rho_c, pi, kappa)`,
/// with the diagonal replica parameters pinned at the two saddles.
#[derive(Debug, Clone)]
pub struct CoupledAction {
    delta: [Vec<f64>; 2],
    h0: Vec<f64>,
    gamma: f64,
    saddles: [[f64; 3]; 2],
}

impl CoupledAction {
    pub fn new(
        profile: &DeterministicProfile,
        params: &ChannelParams,
        signal: &SaddleSolution,
        noise: &SaddleSolution,
    ) -> Result<Self> {
        profile.check_modes(params)?;
        Ok(Self {
            delta: [
                SaddleVariant::signal(profile, params).delta().to_vec(),
                SaddleVariant::noise(profile, params).delta().to_vec(),
            ],
            h0: profile.h0().to_vec(),
            gamma: params.gamma(),
            saddles: [signal.point(), noise.point()],
        })
    }
}

impl ActionEvaluator for CoupledAction {
    fn tag(&self) -> HessianTag {
        HessianTag::Cross
    }

    fn eval(&self, x: [f64; 4]) -> f64 {
        let n = self.h0.len() as f64;
        let [[t1, r1, p1], [t2, r2, p2]] = self.saddles;
        let [tau, rc, pi, kappa] = x;
        // Tr(Rs^2) = 1, Tr(Ra^2) = -1, diagonal-times-generator traces vanish.
        let trace = t1 * r1 + t2 * r2 + tau * rc - p1 * p1 - p2 * p2 - pi * pi + kappa * kappa;
        let mut action = -n * trace;
        for k in 0..self.h0.len() {
            let det = self.block(k, x).determinant();
            if det == 0.0 || !det.is_finite() {
                return f64::NAN;
            }
            action += det.abs().ln();
        }
        action
    }

    fn eval_difference(&self, at: [f64; 4], dx: [f64; 4]) -> f64 {
        let n = self.h0.len() as f64;
        let ([tau, rc, pi, kappa], [dtau, drc, dpi, dkappa]) = (at, dx);
        let mut action = -n
            * (tau * drc + rc * dtau + dtau * drc - 2.0 * pi * dpi - dpi * dpi + 2.0 * kappa * dkappa
                + dkappa * dkappa);
        for k in 0..self.h0.len() {
            // The block is affine in the cross coordinates, so the increment
            // is the linear part alone and carries no cancellation.
            let e = self.block(k, dx) - self.block(k, [0.0; 4]);
            let Some(inv) = self.block(k, at).try_inverse() else {
                return f64::NAN;
            };
            action += ln_abs_1p(det_identity_plus_minus_one(&(inv * e)));
        }
        action
    }
}

impl CoupledAction {
    /// `diag(1, i) A_k diag(1, i)`: real, with the determinant of `A_k`.
    fn block(&self, k: usize, [tau, rc, pi, kappa]: [f64; 4]) -> Matrix4<f64> {
        let g = self.gamma;
        let s = FRAC_1_SQRT_2;
        let [[t1, r1, p1], [t2, r2, p2]] = self.saddles;
        let h = self.h0[k];
        let x = Matrix2::new(self.delta[0][k] + g * t1, g * tau * s, g * tau * s, self.delta[1][k] + g * t2);
        let w = Matrix2::new(1.0 + g * r1, g * rc * s, g * rc * s, 1.0 + g * r2);
        let pm = Matrix2::new(p1, pi * s, pi * s, p2);
        let qm = Matrix2::new(0.0, kappa * s, -kappa * s, 0.0);
        let y1 = Matrix2::identity() * h - (pm + qm) * g;
        let y2 = Matrix2::identity() * h - (pm - qm) * g;
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&x);
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(-y1));
        m.fixed_view_mut::<2, 2>(2, 0).copy_from(&(-y2));
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&(-w));
        m
    }
}

fn check_fd_step(step: f64) -> Result<()> {
    if !(step >= FD_STEP_RANGE.0 && step <= FD_STEP_RANGE.1) {
        return Err(Error::InvalidParameter {
            field: "fd_step",
            reason: format!("must lie in [1e-6, 1e-3], got {step}"),
        });
    }
    Ok(())
}

fn central_hessian(action: &dyn ActionEvaluator, at: [f64; 4], h: f64) -> Result<[[f64; 4]; 4]> {
    if !action.eval(at).is_finite() {
        return Err(Error::NonFiniteAction { point: at });
    }
    let eval = |shift: [(usize, f64); 2]| -> Result<f64> {
        let mut dx = [0.0; 4];
        for (i, d) in shift {
            dx[i] += d;
        }
        let v = action.eval_difference(at, dx);
        if v.is_finite() {
            Ok(v)
        } else {
            let mut x = at;
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
            Err(Error::NonFiniteAction { point: x })
        }
    };
    let f0 = 0.0;
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        let fp = eval([(i, h), (i, 0.0)])?;
        let fm = eval([(i, -h), (i, 0.0)])?;
        out[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = eval([(i, h), (j, h)])?;
            let fpm = eval([(i, h), (j, -h)])?;
            let fmp = eval([(i, -h), (j, h)])?;
            let fmm = eval([(i, -h), (j, -h)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Central second differences at `step` and `step / RICHARDSON_RATIO`, combined by one
/// Richardson step to cancel the `O(step^2)` truncation.
pub fn sigma_fd(action: &dyn ActionEvaluator, at: [f64; 4], step: f64) -> Result<Hessian4> {
    check_fd_step(step)?;
    let coarse = central_hessian(action, at, step)?;
    let fine = central_hessian(action, at, step / RICHARDSON_RATIO)?;
    let w = RICHARDSON_RATIO * RICHARDSON_RATIO;
    let mut entries = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            entries[i][j] = (w * fine[i][j] - coarse[i][j]) / (w - 1.0);
        }
    }
    Ok(Hessian4 {
        entries,
        tag: action.tag(),
    })
}

/// Finite-difference Hessian of the single-variant action at its saddle.
pub fn sigma_fd_single(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
    step: f64,
) -> Result<Hessian4> {
    require_converged(solution)?;
    let action = SingleAction::new(variant, profile, params)?;
    sigma_fd(&action, [solution.t, solution.r, solution.p, solution.q], step)
}

/// Covariance Hessian: finite differences of the coupled action in the cross
/// coordinates at the block-diagonal saddle. Requires uniform loss.
pub fn sigma_cov(
    profile: &DeterministicProfile,
    params: &ChannelParams,
    signal: &SaddleSolution,
    noise: &SaddleSolution,
    step: f64,
) -> Result<Hessian4> {
    if !profile.has_uniform_loss() {
        return Err(Error::UnsupportedProfile(
            "covariance Hessian requires a uniform loss profile".into(),
        ));
    }
    require_converged(signal)?;
    require_converged(noise)?;
    let action = CoupledAction::new(profile, params, signal, noise)?;
    sigma_fd(&action, [0.0; 4], step)
}

type C2 = Matrix2<Complex64>;

fn stability_resolvents(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
) -> Result<Vec<C2>> {
    let i = Complex64::i();
    Ok(saddle_terms(variant, profile, params, solution)?
        .into_iter()
        .map(|[a, bb, b, z]| {
            Matrix2::new(
                Complex64::from(a),
                -i * b,
                -i * b,
                Complex64::from(bb),
            ) / Complex64::from(z)
        })
        .collect())
}

/// `ln det(1 - T)` for `T(x) = -(gamma^2 / N) sum_k S1_k sx x sx S2_k` on 2x2 `x`.
fn log_det_stability(s1: &[C2], s2: &[C2], gamma: f64) -> f64 {
    let sx = Matrix2::new(
        Complex64::from(0.0),
        Complex64::from(1.0),
        Complex64::from(1.0),
        Complex64::from(0.0),
    );
    let n = s1.len() as f64;
    let mut op = Matrix4::<Complex64>::identity();
    for col in 0..4 {
        let mut x = C2::zeros();
        x[(col / 2, col % 2)] = Complex64::from(1.0);
        let mut y = C2::zeros();
        for (a, b) in s1.iter().zip(s2) {
            y += a * sx * x * sx * b;
        }
        y *= Complex64::from(-gamma * gamma / n);
        for row in 0..4 {
            op[(row, col)] -= y[(row / 2, row % 2)];
        }
    }
    op.determinant().ln().re
}

/// Variance from the linear stability operator of the saddle equations, an
/// independent route to the same leading order as the determinant formula.
pub fn variance_stability_operator(
    profile: &DeterministicProfile,
    params: &ChannelParams,
    signal: &SaddleSolution,
    noise: &SaddleSolution,
) -> Result<f64> {
    require_converged(signal)?;
    require_converged(noise)?;
    let s1 = stability_resolvents(&SaddleVariant::signal(profile, params), profile, params, signal)?;
    let s2 = stability_resolvents(&SaddleVariant::noise(profile, params), profile, params, noise)?;
    let g = params.gamma();
    Ok(-log_det_stability(&s1, &s1, g) - log_det_stability(&s2, &s2, g) + 2.0 * log_det_stability(&s1, &s2, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    /// Closed-form single-variant Hessians, finite-difference covariance Hessian.
    Analytic,
    /// All three Hessians by finite differences.
    FiniteDifference,
    /// Covariance from a Monte Carlo ensemble (non-uniform loss).
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSettings {
    pub solver: SolverSettings,
    pub fd_step: f64,
    /// `Analytic` or `FiniteDifference`; `MonteCarlo` is chosen automatically.
    pub method: VarianceMethod,
    pub mc_runs: u64,
    pub mc_seed: u64,
    pub mc_chunks: usize,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            fd_step: FD_STEP,
            method: VarianceMethod::Analytic,
            mc_runs: 100_000,
            mc_seed: 7,
            mc_chunks: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDiagnostics {
    /// Constant actually added to the determinant formula.
    pub offset: f64,
    pub candidate_offset: f64,
    pub var_total_with_candidate_offset: f64,
    /// Negative variance within tolerance was clamped to zero.
    pub clamped: bool,
    pub det_sigma_i1_transcribed: f64,
    pub det_sigma_i2_transcribed: f64,
    /// Same quantity through the stability operator of the saddle equations.
    pub var_total_stability: Option<f64>,
}

/// Components are normalized by the `gamma = 0` determinant so that each is
/// the leading-order (co)variance itself; `var_total` is unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceReport {
    pub var_i1: f64,
    pub var_i2: f64,
    pub covar: f64,
    pub var_total: f64,
    pub method: VarianceMethod,
    pub det_sigma_i1: f64,
    pub det_sigma_i2: f64,
    pub det_sigma_cov: Option<f64>,
    pub diagnostics: VarianceDiagnostics,
}

/// Leading-order variance of `I = I1 - I2`:
/// `-ln|det S_I1| - ln|det S_I2| + 2 ln|det S_cov| + offset`.
pub fn variance(
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &VarianceSettings,
) -> Result<VarianceReport> {
    check_fd_step(settings.fd_step)?;
    let (v1, s1) = solve_variant(VariantKind::I1, profile, params, &settings.solver)?;
    let (v2, s2) = solve_variant(VariantKind::I2, profile, params, &settings.solver)?;
    let (h1, h2) = match settings.method {
        VarianceMethod::FiniteDifference => (
            sigma_fd_single(&v1, profile, params, &s1, settings.fd_step)?,
            sigma_fd_single(&v2, profile, params, &s2, settings.fd_step)?,
        ),
        _ => (
            sigma_analytic(&v1, profile, params, &s1)?,
            sigma_analytic(&v2, profile, params, &s2)?,
        ),
    };
    let reference = reference_log_det(profile.len());
    let var_i1 = reference - h1.log_abs_det();
    let var_i2 = reference - h2.log_abs_det();

    let (covar, det_cov, method, stability) = if profile.has_uniform_loss() {
        let hc = sigma_cov(profile, params, &s1, &s2, settings.fd_step)?;
        let method = match settings.method {
            VarianceMethod::FiniteDifference => VarianceMethod::FiniteDifference,
            _ => VarianceMethod::Analytic,
        };
        let stability = variance_stability_operator(profile, params, &s1, &s2)?;
        (reference - hc.log_abs_det(), Some(hc.det()), method, Some(stability))
    } else {
        let run = RunConfig::new(*params, profile.clone(), settings.mc_runs, settings.mc_seed)
            .with_chunks(settings.mc_chunks)
            .with_retain_samples(true);
        let out = run_ensemble(&run)?;
        let samples = out.samples.ok_or(Error::EmptySamples)?;
        let joint = joint_covariance(&samples.i1, &samples.i2);
        (joint.cov, None, VarianceMethod::MonteCarlo, None)
    };

    let raw = var_i1 + var_i2 - 2.0 * covar + VARIANCE_OFFSET;
    let clamped = raw < 0.0;
    if raw < -NEGATIVE_VARIANCE_TOL {
        return Err(Error::ConventionError { value: raw });
    }
    let var_total = raw.max(0.0);
    let t1 = sigma_transcribed(&v1, profile, params, &s1)?;
    let t2 = sigma_transcribed(&v2, profile, params, &s2)?;
    Ok(VarianceReport {
        var_i1,
        var_i2,
        covar,
        var_total,
        method,
        det_sigma_i1: h1.det(),
        det_sigma_i2: h2.det(),
        det_sigma_cov: det_cov,
        diagnostics: VarianceDiagnostics {
            offset: VARIANCE_OFFSET,
            candidate_offset: CANDIDATE_VARIANCE_OFFSET,
            var_total_with_candidate_offset: raw - VARIANCE_OFFSET + CANDIDATE_VARIANCE_OFFSET,
            clamped,
            det_sigma_i1_transcribed: t1.det(),
            det_sigma_i2_transcribed: t2.det(),
            var_total_stability: stability,
        },
    })
}
