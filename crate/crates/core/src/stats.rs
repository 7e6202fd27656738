//! Order-fixed reductions and Monte Carlo estimates.

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Mean with standard error `sd/√n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MCEstimate {
    /// Estimate from i.i.d. samples. With `antithetic`, consecutive pairs
    /// `(2k, 2k+1)` are averaged first and `n` counts pairs.
    pub fn from_samples(xs: &[f64], antithetic: bool) -> Self {
        if antithetic && xs.len() >= 2 {
            let pairs: Vec<f64> = xs.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
            return Self::from_samples(&pairs, false);
        }
        let n = xs.len();
        MCEstimate {
            mean: mean(xs),
            std_error: (sample_variance(xs) / n.max(1) as f64).sqrt(),
            n,
        }
    }

    /// Estimate of `E[a − b]` from paired samples.
    pub fn paired_difference(a: &[f64], b: &[f64], antithetic: bool) -> Self {
        assert_eq!(a.len(), b.len());
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&d, antithetic)
    }

    /// `|mean − target| ≤ k·SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }

    /// Distance to `target` in standard errors; infinite when SE is zero and
    /// the target is missed.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// `√(a² + b²)`.
pub fn combined_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}
