//! Monte Carlo summaries, bound verdicts, and small fitting utilities.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Two-pass estimate over values in their given order.
    pub fn of(values: &[f64]) -> MeanSe {
        let n = values.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se, n }
    }

    pub fn of_iter(values: impl Iterator<Item = f64>) -> MeanSe {
        let v: Vec<f64> = values.collect();
        Self::of(&v)
    }
}

/// One bound comparison: passes iff `empirical <= bound + slack_se * se`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub label: String,
    pub t: Option<f64>,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub slack_se: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn upper(label: impl Into<String>, t: Option<f64>, est: MeanSe, bound: f64, slack_se: f64) -> Self {
        let pass = est.mean <= bound + slack_se * est.se;
        BoundCheck { label: label.into(), t, empirical: est.mean, se: est.se, bound, slack_se, pass }
    }
}

/// Collection of bound checks with named constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub constants: Vec<(String, f64)>,
    pub checks: Vec<BoundCheck>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>) -> Self {
        BoundReport { name: name.into(), constants: Vec::new(), checks: Vec::new(), notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Ordinary least squares `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(LinearFit { intercept, slope, r_squared, n })
}

/// Clopper–Pearson two-sided interval at confidence `1 - alpha`.
pub fn clopper_pearson(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let (k, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 { 0.0 } else { beta_quantile(k, n - k + 1.0, alpha / 2.0) };
    let upper = if successes == trials { 1.0 } else { beta_quantile(k + 1.0, n - k, 1.0 - alpha / 2.0) };
    (lower, upper)
}

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta function.
fn beta_quantile(a: f64, b: f64, prob: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoidal integral of samples `y` over the grid `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_basic() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0_f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.7 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.7).abs() < 1e-14 && (f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn clopper_pearson_known_values() {
        // n=10, k=0 upper = 1 - 0.025^(1/10)
        let (lo, hi) = clopper_pearson(0, 10, 0.05);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025_f64.powf(0.1))).abs() < 1e-10);
        // k=n lower = 0.025^(1/n)
        let (lo, _) = clopper_pearson(20, 20, 0.05);
        assert!((lo - 0.025_f64.powf(1.0 / 20.0)).abs() < 1e-10);
        // k=5, n=10: reference interval (0.187086, 0.812914)
        let (lo, hi) = clopper_pearson(5, 10, 0.05);
        assert!((lo - 0.187086).abs() < 1e-5 && (hi - 0.812914).abs() < 1e-5);
    }

    #[test]
    fn trapezoid_linear() {
        let t = [0.0, 0.5, 2.0];
        assert!((trapezoid(&t, &t) - 2.0).abs() < 1e-15);
    }
}
