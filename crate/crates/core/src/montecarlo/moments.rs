//! Streaming first and second moments of `(I, I1, I2)` with an exact pairwise merge.

use serde::Serialize;

/// Accumulates count, means, sums of squared deviations and the co-deviation of
/// `I1` and `I2`. Singular realizations are counted in `rejected` and contribute
/// nothing else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StreamingMoments {
    pub count: u64,
    /// Mean of `I`.
    pub mean: f64,
    /// Sum of squared deviations of `I`.
    pub m2: f64,
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub m2_i1: f64,
    pub m2_i2: f64,
    /// Sum of co-deviations of `I1` and `I2`.
    pub cross: f64,
    pub rejected: u64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, i: f64, i1: f64, i2: f64) {
        self.count += 1;
        let n = self.count as f64;
        let d = i - self.mean;
        self.mean += d / n;
        self.m2 += d * (i - self.mean);

        let d1 = i1 - self.mean_i1;
        let d2 = i2 - self.mean_i2;
        self.mean_i1 += d1 / n;
        self.mean_i2 += d2 / n;
        self.m2_i1 += d1 * (i1 - self.mean_i1);
        self.m2_i2 += d2 * (i2 - self.mean_i2);
        self.cross += d1 * (i2 - self.mean_i2);
    }

    pub fn reject(&mut self) {
        self.rejected += 1;
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Self) {
        self.rejected += other.rejected;
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let rejected = self.rejected;
            *self = *other;
            self.rejected = rejected;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let w = na * nb / n;

        let d = other.mean - self.mean;
        let d1 = other.mean_i1 - self.mean_i1;
        let d2 = other.mean_i2 - self.mean_i2;

        self.m2 += other.m2 + d * d * w;
        self.m2_i1 += other.m2_i1 + d1 * d1 * w;
        self.m2_i2 += other.m2_i2 + d2 * d2 * w;
        self.cross += other.cross + d1 * d2 * w;

        self.mean += d * nb / n;
        self.mean_i1 += d1 * nb / n;
        self.mean_i2 += d2 * nb / n;
        self.count += other.count;
    }

    fn unbiased(&self, m2: f64) -> f64 {
        if self.count > 1 {
            m2 / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn variance(&self) -> f64 {
        self.unbiased(self.m2)
    }

    pub fn var_i1(&self) -> f64 {
        self.unbiased(self.m2_i1)
    }

    pub fn var_i2(&self) -> f64 {
        self.unbiased(self.m2_i2)
    }

    pub fn covariance(&self) -> f64 {
        self.unbiased(self.cross)
    }

    /// Standard error of the mean of `I`.
    pub fn std_error(&self) -> f64 {
        if self.count > 1 {
            (self.variance() / self.count as f64).sqrt()
        } else {
            f64::INFINITY
        }
    }

    pub fn attempted(&self) -> u64 {
        self.count + self.rejected
    }
}

/// Unbiased second moments of two paired streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointCovariance {
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
    /// Variance of `I1 - I2`, estimated directly from the differences.
    pub var_of_difference: f64,
}

/// Two-pass estimators over paired samples.
///
/// Fewer than two pairs yields all zeros.
pub fn joint_covariance(i1: &[f64], i2: &[f64]) -> JointCovariance {
    let n = i1.len().min(i2.len());
    if n < 2 {
        return JointCovariance {
            var1: 0.0,
            var2: 0.0,
            cov: 0.0,
            var_of_difference: 0.0,
        };
    }
    let (i1, i2) = (&i1[..n], &i2[..n]);
    let nf = n as f64;
    let m1 = i1.iter().sum::<f64>() / nf;
    let m2 = i2.iter().sum::<f64>() / nf;
    let md = i1.iter().zip(i2).map(|(a, b)| a - b).sum::<f64>() / nf;
    let (mut s11, mut s22, mut s12, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in i1.iter().zip(i2) {
        let da = a - m1;
        let db = b - m2;
        let dd = (a - b) - md;
        s11 += da * da;
        s22 += db * db;
        s12 += da * db;
        sdd += dd * dd;
    }
    let denom = nf - 1.0;
    JointCovariance {
        var1: s11 / denom,
        var2: s22 / denom,
        cov: s12 / denom,
        var_of_difference: sdd / denom,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn accumulate(xs: &[(f64, f64)]) -> StreamingMoments {
        let mut m = StreamingMoments::new();
        for &(a, b) in xs {
            m.push(a - b, a, b);
        }
        m
    }

    #[test]
    fn streaming_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<(f64, f64)> = (0..5000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let w: f64 = rng.sample(StandardNormal);
                (10.0 + z, 4.0 + 0.5 * z + w)
            })
            .collect();
        let m = accumulate(&xs);
        let a: Vec<f64> = xs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = xs.iter().map(|p| p.1).collect();
        let j = joint_covariance(&a, &b);
        assert!(rel(m.var_i1(), j.var1) < 1e-12);
        assert!(rel(m.var_i2(), j.var2) < 1e-12);
        assert!(rel(m.covariance(), j.cov) < 1e-12);
        assert!(rel(m.variance(), j.var_of_difference) < 1e-12);
        assert!(rel(j.var_of_difference, j.var1 + j.var2 - 2.0 * j.cov) < 1e-12);
    }

    #[test]
    fn identical_streams_have_zero_difference_variance() {
        let a = [1.0, 2.0, 5.0, -3.0];
        let j = joint_covariance(&a, &a);
        assert_eq!(j.var_of_difference, 0.0);
        assert!((j.var1 - j.cov).abs() < 1e-15);
    }

    #[test]
    fn constant_streams_are_all_zero() {
        let j = joint_covariance(&[2.0; 10], &[1.0; 10]);
        assert_eq!((j.var1, j.var2, j.cov, j.var_of_difference), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn independent_streams_have_negligible_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let j = joint_covariance(&a, &b);
        // Standard error of the sample covariance of independent unit normals is 1/sqrt(n).
        assert!(j.cov.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn rejections_survive_merge() {
        let mut a = StreamingMoments::new();
        a.reject();
        let mut b = StreamingMoments::new();
        b.push(1.0, 2.0, 1.0);
        b.reject();
        a.merge(&b);
        assert_eq!(a.rejected, 2);
        assert_eq!(a.count, 1);
        assert_eq!(a.attempted(), 3);
    }

    proptest! {
        #[test]
        fn merge_equals_single_pass(
            xs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..200),
            split_a in 0usize..200,
            split_b in 0usize..200,
        ) {
            let n = xs.len();
            let (lo, hi) = (split_a.min(split_b) % n, split_a.max(split_b) % n);
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let whole = accumulate(&xs);
            let parts = [accumulate(&xs[..lo]), accumulate(&xs[lo..hi]), accumulate(&xs[hi..])];

            // Merge in two different orders.
            let mut fwd = StreamingMoments::new();
            for p in &parts { fwd.merge(p); }
            let mut rev = StreamingMoments::new();
            for p in parts.iter().rev() { rev.merge(p); }

            for m in [fwd, rev] {
                prop_assert_eq!(m.count, whole.count);
                let scale = whole.m2_i1.abs() + whole.m2_i2.abs() + whole.m2.abs() + 1.0;
                prop_assert!((m.mean - whole.mean).abs() <= 1e-9 * (whole.mean.abs() + 1.0));
                prop_assert!((m.m2 - whole.m2).abs() <= 1e-9 * scale);
                prop_assert!((m.m2_i1 - whole.m2_i1).abs() <= 1e-9 * scale);
                prop_assert!((m.m2_i2 - whole.m2_i2).abs() <= 1e-9 * scale);
                prop_assert!((m.cross - whole.cross).abs() <= 1e-9 * scale);
                prop_assert!(m.variance() >= 0.0);
            }
        }
    }
}
