//! Tracking-fidelity metrics: RMSE, Pearson correlation and the
//! significance gate used by the evaluation report.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation undefined: {0} input is constant")]
    ConstantInput(&'static str),
}

/// Root-mean-square error between two equal-length traces.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum_sq / x.len() as f64).sqrt())
}

/// Sample Pearson correlation, two-pass (centered) formulation, clamped
/// to [-1, 1] against rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ConstantInput("first"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ConstantInput("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two
/// values, matching the +/- dispersion convention of the report.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Two-tailed critical t values at alpha = 1e-4 for df = 1..=30; beyond
/// that the normal quantile is used.
const T_CRIT_1E4: [f64; 30] = [
    6366.1977, 99.9925, 28.0001, 15.5441, 11.1777, 9.0823, 7.8846, 7.1200, 6.5937, 6.2111,
    5.9212, 5.6945, 5.5125, 5.3634, 5.2391, 5.1339, 5.0438, 4.9657, 4.8975, 4.8373, 4.7839,
    4.7361, 4.6932, 4.6544, 4.6191, 4.5870, 4.5575, 4.5305, 4.5055, 4.4824,
];
const Z_CRIT_1E4: f64 = 3.8906;

/// Significance gate for a correlation: true when the t statistic
/// t = r sqrt((n-2)/(1-r^2)) clears the two-tailed p < 1e-4 critical value
/// with n - 2 degrees of freedom.
pub fn correlation_significant(r: f64, n: usize) -> bool {
    if n < 3 {
        return false;
    }
    let df = n - 2;
    let r = r.clamp(-1.0, 1.0);
    if r.abs() >= 1.0 {
        return true;
    }
    let t = r.abs() * ((df as f64) / (1.0 - r * r)).sqrt();
    let crit = if df <= 30 {
        T_CRIT_1E4[df - 1]
    } else {
        Z_CRIT_1E4
    };
    t >= crit
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference implementations along independent routes: compensated
    // (Kahan) summation for rmse, the uncentered covariance formula for
    // pearson.
    fn rmse_reference(x: &[f64], y: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (a, b) in x.iter().zip(y) {
            let term = (a - b) * (a - b) - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        (sum / x.len() as f64).sqrt()
    }

    fn pearson_reference(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn rmse_of_identical_traces_is_zero() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn rmse_hand_computed() {
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_relative_eq!(r, (25.0f64 / 2.0).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn rmse_argument_errors() {
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(rmse(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn pearson_perfect_linear_is_one() {
        let x = vec![0.5, 1.0, 2.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(pearson(&x, &y).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
    }

    #[test]
    fn pearson_hand_computed_point_eight() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn pearson_constant_input_is_distinct_error() {
        let err = pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err, MetricsError::ConstantInput("first"));
        let err = pearson(&[1.0, 2.0], &[5.0, 5.0]).unwrap_err();
        assert_eq!(err, MetricsError::ConstantInput("second"));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(MetricsError::TooShort { .. })
        ));
    }

    #[test]
    fn metrics_match_reference_routes_on_many_random_pairs() {
        // Deterministic xorshift fill, 1000 pairs.
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        };
        for trial in 0..1000 {
            let n = 2 + (trial % 97);
            let x: Vec<f64> = (0..n).map(|_| next()).collect();
            let y: Vec<f64> = (0..n).map(|_| next()).collect();

            let r1 = rmse(&x, &y).unwrap();
            let r2 = rmse_reference(&x, &y);
            assert!((r1 - r2).abs() <= 1e-12 * r2.abs().max(1.0), "rmse {r1} vs {r2}");

            let p1 = pearson(&x, &y).unwrap();
            let p2 = pearson_reference(&x, &y);
            assert!((p1 - p2).abs() <= 1e-12, "pearson {p1} vs {p2}");
        }
    }

    #[test]
    fn significance_gate_behaves_at_the_boundary() {
        // df = 18, critical t = 4.9657: r just above/below the implied bound.
        let n = 20;
        assert!(correlation_significant(0.99, n));
        assert!(!correlation_significant(0.30, n));
        assert!(!correlation_significant(0.99, 2));
        assert!(correlation_significant(1.0, 3));
        // Large-sample regime uses the normal quantile.
        assert!(correlation_significant(0.13, 1000));
        assert!(!correlation_significant(0.10, 1000));
    }

    #[test]
    fn std_is_sample_not_population() {
        let s = sample_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(s, (5.0f64 / 3.0).sqrt(), max_relative = 1e-15);
        assert_eq!(sample_std(&[7.0]), 0.0);
    }
}
