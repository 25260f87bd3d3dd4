//! Saddle-point equations for the order parameters and the analytic mean.
//!
//! For a variant with diagonal shift `Delta` (`Gamma^2 + rho` for `I1`,
//! `Gamma^2` for `I2`) the order parameters solve
//!
//! ```text
//! r = (1/N) Tr[ gamma (1 + gamma r)    / Z1 ]
//! p = (1/N) Tr[ gamma (H0 - gamma p)   / Z1 ]
//! t = (1/N) Tr[ gamma (Delta + gamma t) / Z1 ]
//! Z1 = (Delta + gamma t)(1 + gamma r) + (H0 - gamma p)^2,   q = 0
//! ```
//!
//! and the large-N mean of `ln det[(H0 + gamma G)^2 + Delta]` is
//! `-N (t r - p^2) + Tr ln Z1`. All traces are sums over the diagonal profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelParams, DeterministicProfile};

/// Number of gamma increments used by the continuation solver.
pub const CONTINUATION_STEPS: usize = 32;
/// Damping halvings tried after the iterate leaves the admissible region.
const MAX_DAMPING_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantKind {
    /// `ln det[(H0 + gamma G)^2 + Gamma^2 + rho]`
    I1,
    /// `ln det[(H0 + gamma G)^2 + Gamma^2]`
    I2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleVariant {
    kind: VariantKind,
    delta_diag: Vec<f64>,
}

impl SaddleVariant {
    pub fn new(kind: VariantKind, profile: &DeterministicProfile, params: &ChannelParams) -> Self {
        let shift = match kind {
            VariantKind::I1 => params.rho(),
            VariantKind::I2 => 0.0,
        };
        let delta_diag = profile.loss().iter().map(|g| g * g + shift).collect();
        Self { kind, delta_diag }
    }

    pub fn signal(profile: &DeterministicProfile, params: &ChannelParams) -> Self {
        Self::new(VariantKind::I1, profile, params)
    }

    pub fn noise(profile: &DeterministicProfile, params: &ChannelParams) -> Self {
        Self::new(VariantKind::I2, profile, params)
    }

    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta_diag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleSolution {
    pub t: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SaddleSolution {
    pub fn point(&self) -> [f64; 3] {
        [self.t, self.r, self.p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point `(t, r, p)`.
    pub init: [f64; 3],
    /// Reach the target gamma in [`CONTINUATION_STEPS`] increments from 0.
    pub continuation: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-12,
            max_iter: 100_000,
            init: [0.0; 3],
            continuation: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter {
                field: "damping",
                reason: format!("must be in (0, 1], got {}", self.damping),
            });
        }
        if !(self.tol >= 1e-14 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "tol",
                reason: format!("must be >= 1e-14, got {}", self.tol),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                field: "max_iter",
                reason: "must be >= 1".into(),
            });
        }
        if self.init.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "init",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

fn check_variant(variant: &SaddleVariant, profile: &DeterministicProfile, params: &ChannelParams) -> Result<()> {
    profile.check_modes(params)?;
    if variant.delta_diag.len() != profile.len() {
        return Err(Error::DimensionMismatch {
            expected: profile.len(),
            actual: variant.delta_diag.len(),
            context: "variant shift length vs profile",
        });
    }
    Ok(())
}

/// `Z1_k = (Delta_k + gamma t)(1 + gamma r) + (h0_k - gamma p)^2`, required to be positive.
pub fn z1_diag(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    t: f64,
    r: f64,
    p: f64,
) -> Result<Vec<f64>> {
    check_variant(variant, profile, params)?;
    let gamma = params.gamma();
    variant
        .delta_diag
        .iter()
        .zip(profile.h0())
        .enumerate()
        .map(|(index, (&delta, &h))| {
            let b = h - gamma * p;
            let z = (delta + gamma * t) * (1.0 + gamma * r) + b * b;
            if z > 0.0 && z.is_finite() {
                Ok(z)
            } else {
                Err(Error::InvalidSaddleRegion { index, value: z })
            }
        })
        .collect()
}

/// Right-hand sides of the `(t, r, p)` equations.
fn saddle_rhs(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    [t, r, p]: [f64; 3],
) -> Result<[f64; 3]> {
    let z = z1_diag(variant, profile, params, t, r, p)?;
    let gamma = params.gamma();
    let n = profile.len() as f64;
    let (mut rt, mut rr, mut rp) = (0.0, 0.0, 0.0);
    for ((&zk, &delta), &h) in z.iter().zip(&variant.delta_diag).zip(profile.h0()) {
        rt += (delta + gamma * t) / zk;
        rr += (1.0 + gamma * r) / zk;
        rp += (h - gamma * p) / zk;
    }
    Ok([gamma * rt / n, gamma * rr / n, gamma * rp / n])
}

/// Defects `(dr, dp, dt)`: right-hand side minus current value.
pub fn saddle_residual(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    t: f64,
    r: f64,
    p: f64,
) -> Result<(f64, f64, f64)> {
    let [nt, nr, np] = saddle_rhs(variant, profile, params, [t, r, p])?;
    Ok((nr - r, np - p, nt - t))
}

fn max_defect(rhs: [f64; 3], x: [f64; 3]) -> f64 {
    rhs.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn damped_iteration(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    init: [f64; 3],
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SaddleSolution> {
    let mut x = init;
    let mut best = (f64::INFINITY, x, 0);
    for it in 0..max_iter {
        let rhs = saddle_rhs(variant, profile, params, x)?;
        let residual = max_defect(rhs, x);
        if residual < best.0 {
            best = (residual, x, it);
        }
        if residual < tol {
            break;
        }
        for (xi, ri) in x.iter_mut().zip(rhs) {
            *xi = (1.0 - damping) * *xi + damping * ri;
        }
    }
    let (residual, [t, r, p], _) = best;
    Ok(SaddleSolution {
        t,
        r,
        p,
        q: 0.0,
        residual,
        iterations: if residual < tol { best.2 } else { max_iter },
        converged: residual < tol,
    })
}

fn solve_direct(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &SolverSettings,
    init: [f64; 3],
) -> Result<SaddleSolution> {
    let mut damping = settings.damping;
    let mut attempt = 0;
    loop {
        match damped_iteration(variant, profile, params, init, damping, settings.tol, settings.max_iter) {
            Err(Error::InvalidSaddleRegion { .. }) if attempt < MAX_DAMPING_RETRIES => {
                damping *= 0.5;
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Damped fixed-point iteration `x <- (1 - d) x + d RHS(x)`.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged == false`.
pub fn solve_saddle(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &SolverSettings,
) -> Result<SaddleSolution> {
    settings.validate()?;
    check_variant(variant, profile, params)?;
    if !settings.continuation || params.gamma() == 0.0 {
        return solve_direct(variant, profile, params, settings, settings.init);
    }
    let target = params.gamma();
    let mut point = settings.init;
    let mut total = 0;
    let mut last = None;
    for step in 1..=CONTINUATION_STEPS {
        let gamma = target * step as f64 / CONTINUATION_STEPS as f64;
        let stepped = params.with_gamma(gamma)?;
        let sol = solve_direct(variant, profile, &stepped, settings, point)?;
        total += sol.iterations;
        point = sol.point();
        last = Some(sol);
    }
    let mut sol = last.expect("at least one continuation step");
    sol.iterations = total;
    Ok(sol)
}

/// `-N (t r - p^2) + Tr ln Z1` at a converged saddle.
pub fn mean_log_det(
    variant: &SaddleVariant,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    solution: &SaddleSolution,
) -> Result<f64> {
    if !solution.converged {
        return Err(Error::Unconverged {
            residual: solution.residual,
            iterations: solution.iterations,
        });
    }
    let z = z1_diag(variant, profile, params, solution.t, solution.r, solution.p)?;
    let n = profile.len() as f64;
    let (t, r, p) = (solution.t, solution.r, solution.p);
    Ok(-n * (t * r - p * p) + z.iter().map(|z| z.ln()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: VariantKind,
    pub t: f64,
    pub r: f64,
    pub p: f64,
    pub residual: f64,
    pub iterations: usize,
    pub mean: f64,
}

/// Both saddles and the resulting mean `<I1> - <I2>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicaMean {
    pub i1: VariantReport,
    pub i2: VariantReport,
    pub mean: f64,
}

/// Solves one variant and insists on convergence.
pub fn solve_variant(
    kind: VariantKind,
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &SolverSettings,
) -> Result<(SaddleVariant, SaddleSolution)> {
    let variant = SaddleVariant::new(kind, profile, params);
    let sol = solve_saddle(&variant, profile, params, settings)?;
    if !sol.converged {
        return Err(Error::Unconverged {
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    Ok((variant, sol))
}

pub fn replica_mean(
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &SolverSettings,
) -> Result<ReplicaMean> {
    let report = |kind| -> Result<VariantReport> {
        let (variant, sol) = solve_variant(kind, profile, params, settings)?;
        Ok(VariantReport {
            variant: kind,
            t: sol.t,
            r: sol.r,
            p: sol.p,
            residual: sol.residual,
            iterations: sol.iterations,
            mean: mean_log_det(&variant, profile, params, &sol)?,
        })
    };
    let i1 = report(VariantKind::I1)?;
    let i2 = if params.rho() == 0.0 {
        VariantReport {
            variant: VariantKind::I2,
            ..i1
        }
    } else {
        report(VariantKind::I2)?
    };
    Ok(ReplicaMean {
        i1,
        i2,
        mean: i1.mean - i2.mean,
    })
}

/// Analytic mean mutual information `<I1> - <I2>` in nats.
pub fn mean_mutual_information(
    profile: &DeterministicProfile,
    params: &ChannelParams,
    settings: &SolverSettings,
) -> Result<f64> {
    Ok(replica_mean(profile, params, settings)?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::exact_mean_no_crosstalk;
    use proptest::prelude::*;

    fn one_mode(h: f64, loss: f64, gamma: f64, rho0: f64) -> (DeterministicProfile, ChannelParams) {
        (
            DeterministicProfile::uniform(1, h, loss).unwrap(),
            ChannelParams::with_unit_coupling(1, gamma, rho0).unwrap(),
        )
    }

    fn variant_with_delta(delta: f64) -> SaddleVariant {
        SaddleVariant {
            kind: VariantKind::I2,
            delta_diag: vec![delta],
        }
    }

    #[test]
    fn z1_examples() {
        let profile = DeterministicProfile::new(vec![0.5, 2.0], vec![0.3, 1.0]).unwrap();
        let params = ChannelParams::with_unit_coupling(2, 0.0, 2.0).unwrap();
        let v = SaddleVariant::signal(&profile, &params);
        let z = z1_diag(&v, &profile, &params, 0.7, -0.2, 0.4).unwrap();
        assert!((z[0] - (0.09 + 2.0 + 0.25)).abs() < 1e-15);
        assert!((z[1] - (1.0 + 2.0 + 4.0)).abs() < 1e-15);

        let (profile, params) = one_mode(0.0, 0.0, 1.0, 1.0);
        let z = z1_diag(&variant_with_delta(1.0), &profile, &params, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(z, vec![1.0]);

        let (profile, params) = one_mode(1.0, 0.0, 0.5, 1.0);
        let z = z1_diag(&variant_with_delta(2.0), &profile, &params, 0.2, 0.4, 0.1).unwrap();
        assert!((z[0] - 3.4225).abs() < 1e-14);
    }

    #[test]
    fn z1_rejects_non_positive() {
        let (profile, params) = one_mode(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            z1_diag(&variant_with_delta(0.0), &profile, &params, 0.0, 0.0, 0.0),
            Err(Error::InvalidSaddleRegion { index: 0, .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let (profile, params) = one_mode(0.7, 0.3, 0.0, 2.0);
        let v = SaddleVariant::signal(&profile, &params);
        assert_eq!(saddle_residual(&v, &profile, &params, 0.0, 0.0, 0.0).unwrap(), (0.0, 0.0, 0.0));

        // h0 = 0: the p equation reads p = -gamma^2 p / Z1, so p = 0 is a root.
        let (profile, params) = one_mode(0.0, 0.5, 1.3, 2.0);
        let v = SaddleVariant::signal(&profile, &params);
        let (_, dp, _) = saddle_residual(&v, &profile, &params, 0.4, 0.9, 0.0).unwrap();
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn residual_matches_scalar_evaluation() {
        // N = 1, Delta = 1.5, h = 0.8, gamma = 0.7 at (t, r, p) = (0.3, 0.6, -0.2), by hand:
        // Z = (1.5 + 0.21)(1 + 0.42) + (0.8 + 0.14)^2 = 1.71 * 1.42 + 0.8836 = 3.3118
        let (profile, params) = one_mode(0.8, 0.0, 0.7, 1.0);
        let v = variant_with_delta(1.5);
        let z = 3.3118;
        let (dr, dp, dt) = saddle_residual(&v, &profile, &params, 0.3, 0.6, -0.2).unwrap();
        assert!((dr - (0.7 * 1.42 / z - 0.6)).abs() < 1e-14);
        assert!((dp - (0.7 * 0.94 / z + 0.2)).abs() < 1e-14);
        assert!((dt - (0.7 * 1.71 / z - 0.3)).abs() < 1e-14);
    }

    #[test]
    fn no_crosstalk_saddle_is_trivial() {
        let profile = DeterministicProfile::new(vec![0.5, 1.0, 1.5], vec![0.2; 3]).unwrap();
        let params = ChannelParams::with_unit_coupling(3, 0.0, 4.0).unwrap();
        let v = SaddleVariant::signal(&profile, &params);
        let sol = solve_saddle(&v, &profile, &params, &SolverSettings::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        assert_eq!(sol.point(), [0.0; 3]);

        let m1 = mean_log_det(&v, &profile, &params, &sol).unwrap();
        let expected: f64 = profile.h0().iter().map(|h| (4.0 + 0.04 + h * h).ln()).sum();
        assert!((m1 - expected).abs() < 1e-12);

        let mean = mean_mutual_information(&profile, &params, &SolverSettings::default()).unwrap();
        let exact = exact_mean_no_crosstalk(&profile, params.rho()).unwrap();
        assert!((mean - exact).abs() < 1e-12);
    }

    /// Bracketing oracle for N = 1, h0 = 0: p = 0 and, eliminating r through
    /// r = gamma / (Delta + gamma t), t solves t (1 + gamma r(t)) = gamma.
    fn bracket_t(delta: f64, gamma: f64) -> (f64, f64) {
        let f = |t: f64| {
            let r = gamma / (delta + gamma * t);
            t * (1.0 + gamma * r) - gamma
        };
        // Coarse grid to find the sign change, then bisection.
        let grid: Vec<f64> = (0..=4000).map(|k| k as f64 * gamma / 4000.0).collect();
        let (mut lo, mut hi) = grid
            .windows(2)
            .map(|w| (w[0], w[1]))
            .find(|&(a, b)| f(a) <= 0.0 && f(b) >= 0.0)
            .expect("bracket");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        (t, gamma / (delta + gamma * t))
    }

    #[test]
    fn scalar_saddle_matches_bracketing_oracle() {
        let (profile, params) = one_mode(0.0, 0.0, 1.0, 1.0);
        let v = variant_with_delta(1.0);
        let sol = solve_saddle(&v, &profile, &params, &SolverSettings::default()).unwrap();
        assert!(sol.converged);
        let (t, r) = bracket_t(1.0, 1.0);
        assert!((sol.t - t).abs() < 1e-8, "{} vs {}", sol.t, t);
        assert!((sol.r - r).abs() < 1e-8);
        assert!(sol.p.abs() < 1e-12);
        // Closed form of the same system: t = (sqrt(5) - 1)/2 for Delta = gamma = 1.
        assert!((t - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn unconverged_mean_is_rejected() {
        let profile = DeterministicProfile::new(vec![0.5, 1.5], vec![0.2; 2]).unwrap();
        let params = ChannelParams::with_unit_coupling(2, 1.0, 2.0).unwrap();
        let v = SaddleVariant::signal(&profile, &params);
        let settings = SolverSettings {
            max_iter: 2,
            ..SolverSettings::default()
        };
        let sol = solve_saddle(&v, &profile, &params, &settings).unwrap();
        assert!(!sol.converged);
        assert!(matches!(
            mean_log_det(&v, &profile, &params, &sol),
            Err(Error::Unconverged { .. })
        ));
        assert!(matches!(
            mean_mutual_information(&profile, &params, &settings),
            Err(Error::Unconverged { .. })
        ));
    }

    #[test]
    fn zero_rho_gives_zero_mean() {
        let profile = DeterministicProfile::new(vec![0.5, 1.5], vec![0.2; 2]).unwrap();
        let params = ChannelParams::with_unit_coupling(2, 0.7, 0.0).unwrap();
        assert_eq!(mean_mutual_information(&profile, &params, &SolverSettings::default()).unwrap(), 0.0);
    }

    #[test]
    fn continuation_reaches_same_branch() {
        let profile = DeterministicProfile::new(vec![0.5, 0.9, 1.5], vec![0.2; 3]).unwrap();
        let params = ChannelParams::with_unit_coupling(3, 2.0, 100.0).unwrap();
        let direct = SolverSettings::default();
        let cont = SolverSettings {
            continuation: true,
            ..direct
        };
        for kind in [VariantKind::I1, VariantKind::I2] {
            let v = SaddleVariant::new(kind, &profile, &params);
            let a = solve_saddle(&v, &profile, &params, &direct).unwrap();
            let b = solve_saddle(&v, &profile, &params, &cont).unwrap();
            assert!(a.converged && b.converged);
            assert!((a.t - b.t).abs() < 1e-10 && (a.r - b.r).abs() < 1e-10 && (a.p - b.p).abs() < 1e-10);
        }
    }

    #[test]
    fn settings_validation() {
        let bad = [
            SolverSettings { damping: 0.0, ..Default::default() },
            SolverSettings { damping: 1.5, ..Default::default() },
            SolverSettings { tol: 1e-16, ..Default::default() },
            SolverSettings { max_iter: 0, ..Default::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
    }

    fn regime() -> impl Strategy<Value = (Vec<f64>, f64, f64, f64)> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                0.05f64..1.0,
                0.0f64..2.0,
                0.1f64..20.0,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn converged_solutions_are_fixed_points((h0, loss, gamma, rho0) in regime()) {
            let n = h0.len();
            let profile = DeterministicProfile::new(h0, vec![loss; n]).unwrap();
            let params = ChannelParams::with_unit_coupling(n, gamma, rho0).unwrap();
            for kind in [VariantKind::I1, VariantKind::I2] {
                let v = SaddleVariant::new(kind, &profile, &params);
                let sol = solve_saddle(&v, &profile, &params, &SolverSettings::default()).unwrap();
                if sol.converged {
                    let (dr, dp, dt) = saddle_residual(&v, &profile, &params, sol.t, sol.r, sol.p).unwrap();
                    prop_assert!(dr.abs().max(dp.abs()).max(dt.abs()) < 1e-12);
                    prop_assert_eq!(sol.q, 0.0);
                }
            }
        }

        #[test]
        fn variant_ordering_and_rho_monotonicity((h0, loss, gamma, rho0) in regime()) {
            let n = h0.len();
            let profile = DeterministicProfile::new(h0, vec![loss; n]).unwrap();
            let settings = SolverSettings::default();
            let mut last = 0.0;
            for k in 0..20 {
                let rho = rho0 * k as f64 / 19.0;
                let params = ChannelParams::with_unit_coupling(n, gamma, rho).unwrap();
                let m = replica_mean(&profile, &params, &settings).unwrap();
                prop_assert!(m.i1.mean >= m.i2.mean - 1e-12);
                prop_assert!(m.mean >= last - 1e-10);
                last = m.mean;
            }
        }

        #[test]
        fn small_gamma_is_continuous((h0, loss, _gamma, rho0) in regime()) {
            let n = h0.len();
            let profile = DeterministicProfile::new(h0, vec![loss; n]).unwrap();
            let settings = SolverSettings::default();
            let p0 = ChannelParams::with_unit_coupling(n, 0.0, rho0).unwrap();
            let p1 = ChannelParams::with_unit_coupling(n, 1e-6, rho0).unwrap();
            let a = mean_mutual_information(&profile, &p0, &settings).unwrap();
            let b = mean_mutual_information(&profile, &p1, &settings).unwrap();
            prop_assert!((a - b).abs() < 1e-4);
        }
    }
}
