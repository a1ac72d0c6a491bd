//! Ensemble moment accumulation and the Kolmogorov-Smirnov machinery used
//! by the Monte Carlo harness.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Streaming first and second moments of fixed-dimension samples. Merging is
/// associative, so chunked parallel reductions can be replayed in a fixed
/// order for deterministic results.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    dim: usize,
    count: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator { dim, count: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim * dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.count += 1;
        for i in 0..self.dim {
            self.sum[i] += x[i];
            for j in 0..self.dim {
                self.sum_sq[i * self.dim + j] += x[i] * x[j];
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        debug_assert_eq!(self.dim, other.dim);
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.sum[i] / self.count as f64)
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientPaths { got: self.count as usize });
        }
        let n = self.count as f64;
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                cov[(i, j)] = (self.sum_sq[i * self.dim + j] - n * mean[i] * mean[j]) / (n - 1.0);
            }
        }
        // enforce exact symmetry against rounding
        for i in 0..self.dim {
            for j in 0..i {
                let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = avg;
                cov[(j, i)] = avg;
            }
        }
        Ok(cov)
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `sorted` samples against a CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Asymptotic critical value of the KS statistic at significance `alpha`:
/// K_alpha / sqrt(n) with 2 exp(-2 K^2) = alpha.
pub fn ks_critical_value(alpha: f64, n: usize) -> f64 {
    ((2.0 / alpha).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Chi-square CDF with `df` degrees of freedom.
pub fn chi_square_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df).map(|c| c.cdf(x)).unwrap_or(0.0)
}
