//! Cavity scattering matrix of the fiber and extraction of its transmission block.
//!
//! The fiber is a 2N-port cavity with block Hamiltonian `[[0, H^dagger], [H, 0]]`
//! (no backscattering), coupling `W` to the leads and an off-diagonal loss block.
//! `S = I - 2 pi i W^dagger (Hc + i pi W W^dagger + i Loss)^-1 W`; the approximate
//! form drops the `i pi W W^dagger` term, which is small for weak coupling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ChannelParams;

/// Reciprocal condition numbers below this make the resolvent singular.
const MIN_RCOND: f64 = 1e-14;

fn is_hermitian(m: &DMatrix<Complex64>, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct BlockHamiltonian {
    h: DMatrix<Complex64>,
    assembled: DMatrix<Complex64>,
}

impl BlockHamiltonian {
    pub fn new(h: DMatrix<Complex64>) -> Result<Self> {
        if !is_hermitian(&h, 1e-12) {
            return Err(Error::InvalidParameter {
                field: "h",
                reason: "channel Hamiltonian block must be Hermitian".into(),
            });
        }
        let n = h.nrows();
        let mut assembled = DMatrix::zeros(2 * n, 2 * n);
        assembled.view_mut((0, n), (n, n)).copy_from(&h.adjoint());
        assembled.view_mut((n, 0), (n, n)).copy_from(&h);
        Ok(Self { h, assembled })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn assembled(&self) -> &DMatrix<Complex64> {
        &self.assembled
    }
}

#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    w: DMatrix<Complex64>,
    alpha: f64,
}

impl CouplingMatrix {
    /// Perfect leads: `W = sqrt(alpha) I_{2N}`.
    pub fn perfect(n: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "alpha",
                reason: format!("coupling must be finite and >= 0, got {alpha}"),
            });
        }
        let w = DMatrix::identity(2 * n, 2 * n).scale(alpha.sqrt());
        Ok(Self { w, alpha })
    }

    pub fn w(&self) -> &DMatrix<Complex64> {
        &self.w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone)]
pub struct LossBlock {
    gamma_block: DMatrix<Complex64>,
}

impl LossBlock {
    /// Off-diagonal loss `[[0, Gamma], [Gamma, 0]]` from the diagonal of `Gamma`.
    pub fn from_diag(gamma_diag: &[f64]) -> Result<Self> {
        let n = gamma_diag.len();
        let mut gamma_block = DMatrix::zeros(2 * n, 2 * n);
        for (k, &g) in gamma_diag.iter().enumerate() {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter {
                    field: "loss",
                    reason: format!("loss entries must be finite and >= 0, got {g}"),
                });
            }
            gamma_block[(k, n + k)] = Complex64::new(g, 0.0);
            gamma_block[(n + k, k)] = Complex64::new(g, 0.0);
        }
        Ok(Self { gamma_block })
    }

    pub fn n(&self) -> usize {
        self.gamma_block.nrows() / 2
    }

    pub fn gamma_block(&self) -> &DMatrix<Complex64> {
        &self.gamma_block
    }
}

/// 0/1 diagonals selecting output rows (`a`) and input columns (`b`) of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMasks {
    a_diag: Vec<bool>,
    b_diag: Vec<bool>,
}

impl SelectionMasks {
    pub fn new(a_diag: Vec<bool>, b_diag: Vec<bool>) -> Result<Self> {
        let expected = a_diag.len() / 2;
        let valid = a_diag.len() == b_diag.len()
            && a_diag.len() % 2 == 0
            && a_diag.iter().zip(&b_diag).all(|(&a, &b)| !(a && b))
            && a_diag.iter().filter(|&&a| a).count() == expected
            && b_diag.iter().filter(|&&b| b).count() == expected;
        if valid {
            Ok(Self { a_diag, b_diag })
        } else {
            Err(Error::InvalidMasks { expected })
        }
    }

    /// `a = diag(I_N, 0)`, `b = diag(0, I_N)`.
    pub fn standard(n: usize) -> Self {
        let a_diag = (0..2 * n).map(|i| i < n).collect();
        let b_diag = (0..2 * n).map(|i| i >= n).collect();
        Self { a_diag, b_diag }
    }

    pub fn a_diag(&self) -> &[bool] {
        &self.a_diag
    }

    pub fn b_diag(&self) -> &[bool] {
        &self.b_diag
    }
}

fn check_dims(h: &BlockHamiltonian, w: &CouplingMatrix, loss: Option<&LossBlock>) -> Result<()> {
    let dim = 2 * h.n();
    if w.w().nrows() != dim || w.w().ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: w.w().nrows(),
            context: "coupling matrix size",
        });
    }
    if let Some(l) = loss {
        if l.n() != h.n() {
            return Err(Error::DimensionMismatch {
                expected: h.n(),
                actual: l.n(),
                context: "loss block size",
            });
        }
    }
    Ok(())
}

/// `I - 2 pi i W^dagger R^-1 W` with `R` factorized by LU; rejects ill-conditioned `R`.
fn s_from_resolvent(resolvent: DMatrix<Complex64>, w: &CouplingMatrix) -> Result<DMatrix<Complex64>> {
    let sv = resolvent.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > MIN_RCOND * smax) {
        return Err(Error::SingularResolvent {
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    let lu = resolvent.lu();
    let x = lu
        .solve(w.w())
        .ok_or(Error::SingularResolvent { condition: f64::INFINITY })?;
    let dim = x.nrows();
    let coupling = w.w().adjoint() * x;
    Ok(DMatrix::identity(dim, dim) - coupling * Complex64::new(0.0, 2.0 * PI))
}

pub fn build_exact_s(
    h: &BlockHamiltonian,
    w: &CouplingMatrix,
    loss: Option<&LossBlock>,
) -> Result<DMatrix<Complex64>> {
    check_dims(h, w, loss)?;
    let ww = w.w() * w.w().adjoint();
    let mut resolvent = h.assembled() + ww * Complex64::new(0.0, PI);
    if let Some(l) = loss {
        resolvent += l.gamma_block() * Complex64::i();
    }
    s_from_resolvent(resolvent, w)
}

pub fn build_approx_s(
    h: &BlockHamiltonian,
    w: &CouplingMatrix,
    loss: Option<&LossBlock>,
) -> Result<DMatrix<Complex64>> {
    check_dims(h, w, loss)?;
    let dim = 2 * h.n();
    if w.alpha() == 0.0 {
        return Ok(DMatrix::identity(dim, dim));
    }
    let mut resolvent = h.assembled().clone();
    if let Some(l) = loss {
        resolvent += l.gamma_block() * Complex64::i();
    }
    s_from_resolvent(resolvent, w)
}

/// Transmission block: rows selected by `a`, columns selected by `b`.
pub fn extract_u(s: &DMatrix<Complex64>, masks: &SelectionMasks) -> Result<DMatrix<Complex64>> {
    if s.nrows() != masks.a_diag.len() || s.ncols() != masks.b_diag.len() {
        return Err(Error::DimensionMismatch {
            expected: masks.a_diag.len(),
            actual: s.nrows(),
            context: "scattering matrix vs masks",
        });
    }
    let rows: Vec<usize> = (0..s.nrows()).filter(|&i| masks.a_diag[i]).collect();
    let cols: Vec<usize> = (0..s.ncols()).filter(|&j| masks.b_diag[j]).collect();
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| s[(rows[i], cols[j])]))
}

/// `max |U^dagger U - 4 alpha^2 pi^2 (H^2 + Gamma^2)^-1|` with `U` taken from the approximate `S`.
///
/// Exact only when `H` and `Gamma` commute; for general diagonal loss the
/// returned value measures the commutator obstruction.
pub fn verify_gram_identity(
    h_matrix: &DMatrix<Complex64>,
    gamma_diag: &[f64],
    params: &ChannelParams,
) -> Result<f64> {
    let n = h_matrix.nrows();
    if gamma_diag.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gamma_diag.len(),
            context: "loss length vs H",
        });
    }
    let h = BlockHamiltonian::new(h_matrix.clone())?;
    let w = CouplingMatrix::perfect(n, params.alpha())?;
    let loss = LossBlock::from_diag(gamma_diag)?;
    let s = build_approx_s(&h, &w, Some(&loss))?;
    let u = extract_u(&s, &SelectionMasks::standard(n))?;
    let gram = u.adjoint() * &u;

    let mut base = h_matrix * h_matrix;
    for (k, &g) in gamma_diag.iter().enumerate() {
        base[(k, k)] += Complex64::new(g * g, 0.0);
    }
    let inv = base
        .try_inverse()
        .ok_or(Error::SingularResolvent { condition: f64::INFINITY })?;
    let a = params.alpha();
    let target = inv * Complex64::new(4.0 * a * a * PI * PI, 0.0);
    Ok(max_abs(&(gram - target)))
}

/// `max |S S^dagger - I|`.
pub fn unitarity_deviation(s: &DMatrix<Complex64>) -> f64 {
    let n = s.nrows();
    max_abs(&(s * s.adjoint() - DMatrix::identity(n, n)))
}

pub fn max_singular_value(s: &DMatrix<Complex64>) -> f64 {
    s.singular_values().max()
}

/// Deviation from the flux balance `I - S^dagger S = 4 pi alpha R^dagger Loss R`,
/// `R = (Hc + i pi alpha + i Loss)^-1`, for perfect leads.
pub fn flux_balance_deviation(h: &BlockHamiltonian, alpha: f64, loss: &LossBlock) -> Result<f64> {
    let w = CouplingMatrix::perfect(h.n(), alpha)?;
    let s = build_exact_s(h, &w, Some(loss))?;
    let dim = 2 * h.n();
    let resolvent = h.assembled()
        + DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(0.0, PI * alpha)
        + loss.gamma_block() * Complex64::i();
    let r = resolvent
        .try_inverse()
        .ok_or(Error::SingularResolvent { condition: f64::INFINITY })?;
    let lhs = DMatrix::identity(dim, dim) - s.adjoint() * &s;
    let rhs = r.adjoint() * loss.gamma_block() * r * Complex64::new(4.0 * PI * alpha, 0.0);
    Ok(max_abs(&(lhs - rhs)))
}
