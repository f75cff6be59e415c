//! Small statistics toolbox shared by the Monte Carlo estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// A point value with its standard error. Exact values carry `exact = true`
/// and a zero error; Monte Carlo values always carry a positive error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub seed: Option<u64>,
    pub exact: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, replicas: 0, seed: None, exact: true }
    }

    /// Fraction of `successes` in `trials` with binomial standard error.
    pub fn proportion(successes: u64, trials: u64, seed: u64) -> Self {
        let (value, stderr) = proportion(successes, trials);
        Self { value, stderr, replicas: trials, seed: Some(seed), exact: false }
    }

    /// Distance from `other` in units of the combined standard error.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        if se == 0.0 {
            return if self.value == other.value { 0.0 } else { f64::INFINITY };
        }
        (self.value - other.value).abs() / se
    }
}

/// Binomial proportion and standard error. A degenerate sample (all or
/// nothing) reports `1/n` so that Monte Carlo errors never vanish.
pub fn proportion(successes: u64, trials: u64) -> (f64, f64) {
    assert!(trials > 0, "proportion of zero trials");
    let n = trials as f64;
    let p = successes as f64 / n;
    let se = (p * (1.0 - p) / n).sqrt().max(1.0 / n);
    (p, se)
}

/// Sample mean and standard error of the mean, summed in slice order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided z threshold for familywise level `alpha` over `tests` tests
/// (Bonferroni).
pub fn bonferroni_z(alpha: f64, tests: usize) -> f64 {
    normal_quantile(1.0 - alpha / (2.0 * tests.max(1) as f64))
}
