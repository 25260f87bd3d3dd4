//! Empirical CDF and the Kolmogorov-Smirnov distance to a Gaussian reference.

use serde::Serialize;
use libm::erfc;

use crate::error::{Error, Result};

/// `P(X <= x)` for `X ~ N(mean, var)`; a step at `mean` when `var == 0`.
pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    0.5 * erfc(-(x - mean) / (2.0 * var).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted_samples: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidParameter {
                field: "samples",
                reason: "NaN sample".into(),
            });
        }
        let mut sorted_samples = samples.to_vec();
        sorted_samples.sort_by(f64::total_cmp);
        Ok(Self { sorted_samples })
    }

    pub fn len(&self) -> usize {
        self.sorted_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_samples.is_empty()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted_samples
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let below = self.sorted_samples.partition_point(|&s| s <= x);
        below as f64 / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.sorted_samples[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted_samples[self.len() - 1]
    }

    /// `points` equally spaced abscissae spanning the sample range.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (self.min(), self.max());
        if points <= 1 || lo == hi {
            return vec![hi];
        }
        let step = (hi - lo) / (points - 1) as f64;
        (0..points)
            .map(|k| if k + 1 == points { hi } else { lo + step * k as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n_samples: usize,
}

/// Supremum distance between the empirical CDF and `N(ref_mean, ref_var)`,
/// taken on both sides of every step.
pub fn ks_statistic(cdf: &EmpiricalCdf, ref_mean: f64, ref_var: f64) -> Result<KsResult> {
    if !(ref_var > 0.0) || !ref_var.is_finite() {
        return Err(Error::InvalidParameter {
            field: "ref_var",
            reason: format!("reference variance must be > 0, got {ref_var}"),
        });
    }
    let n = cdf.len() as f64;
    let statistic = cdf
        .sorted_samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, ref_mean, ref_var);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.abs().max(below.abs())
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        n_samples: cdf.len(),
    })
}
