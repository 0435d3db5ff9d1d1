//! Sample means with standard errors.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Estimate {
    /// Mean and standard error of the mean. Uses a shifted two-pass sum.
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                count,
            };
        }
        let n = count as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if count == 1 {
            return Self {
                mean,
                std_error: f64::NAN,
                count,
            };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
            count,
        }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }

    /// `(mean - value) / std_error`.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value) / self.std_error
    }
}

/// `E[W] / sd(W)` from samples of `W`, with a delta-method standard error.
pub fn sharpe_estimate(samples: &[f64]) -> Estimate {
    let count = samples.len();
    let n = count as f64;
    if count < 2 {
        return Estimate {
            mean: f64::NAN,
            std_error: f64::NAN,
            count,
        };
    }
    let m = samples.iter().sum::<f64>() / n;
    let c = |p: i32| samples.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (c(2), c(3), c(4));
    let s = m2.sqrt();
    let sh = m / s;
    // gradient of g(μ, σ²) = μ / σ with the joint covariance of (mean, variance)
    let g_mu = 1.0 / s;
    let g_var = -0.5 * m / (m2 * s);
    let var = (g_mu * g_mu * m2 + 2.0 * g_mu * g_var * m3 + g_var * g_var * (m4 - m2 * m2)) / n;
    Estimate {
        mean: sh,
        std_error: var.max(0.0).sqrt(),
        count,
    }
}
