//! Summary arithmetic used for cross-validation and validation reports.

use serde::{Deserialize, Serialize};

/// Mean and sample (n-1) standard deviation of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn summarize(xs: &[f64]) -> Summary {
    Summary {
        mean: mean(xs),
        std: sample_std(xs),
    }
}

/// Round half-up to `decimals` places (values are non-negative in every report here).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    // absorb representation error such as 89.275 -> 89.27499999
    let nudged = scaled + scaled.abs() * 1e-12;
    (nudged + 0.5).floor() / scale
}

/// Percentage `num/den` rounded half-up to two decimals with integer arithmetic.
pub fn percent_half_up(num: u64, den: u64) -> f64 {
    if den == 0 {
        return 0.0;
    }
    // hundredths of a percent: num * 10000 / den, rounded half-up
    let hundredths = (2 * num * 10_000 + den) / (2 * den);
    hundredths as f64 / 100.0
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(91.816, 2), 91.82);
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(round_half_up(2.675, 2), 2.68);
        assert_eq!(percent_half_up(1, 8), 12.5);
        assert_eq!(percent_half_up(1, 3), 33.33);
        assert_eq!(percent_half_up(2, 3), 66.67);
    }

    #[test]
    fn f1_zero_guard() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(f1(1.0, 1.0), 1.0);
    }

    #[test]
    fn std_of_identical_is_zero() {
        assert_eq!(sample_std(&[3.0; 5]), 0.0);
        assert_eq!(sample_std(&[3.0]), 0.0);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(200, 1000);
        assert!(lo < 0.2 && 0.2 < hi);
    }
}
