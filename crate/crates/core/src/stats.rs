//! Small statistics toolkit: log-log fits, standard errors, autocorrelation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Two-sided 95% confidence interval for the slope.
    pub slope_ci: (f64, f64),
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (se, half) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN);
        (se, t * se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Some(LinearFit {
        slope,
        intercept,
        slope_se: se,
        slope_ci: (slope - half, slope + half),
    })
}

/// Fit of `ln y` against `ln x`, skipping nonpositive `y`.
pub fn loglog_fit(pairs: &[(f64, f64)]) -> Option<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    ols(&lx, &ly)
}

/// Mean and standard error of the mean for independent samples.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Complex version: stderr is `sqrt(E|X - mean|² / (n (n-1)))`.
pub fn mean_stderr_complex(xs: &[Complex64]) -> (Complex64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (Complex64::new(f64::NAN, f64::NAN), f64::NAN);
    }
    let mean = xs.iter().sum::<Complex64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).norm_sqr()).sum();
    (mean, (ss / (n * (n - 1.0))).sqrt())
}

/// Integrated autocorrelation time (in samples) by Sokal's self-consistent window.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * c / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(f64, f64)> = (1..20).map(|n| (n as f64, 3.0 * (n as f64).powf(-1.7))).collect();
        let f = loglog_fit(&pairs).unwrap();
        assert!((f.slope + 1.7).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.slope_ci.1 - f.slope_ci.0 < 1e-10);
    }

    #[test]
    fn t_quantile_matches_table() {
        // slope CI half-width with 3 dof uses t = 3.182
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.1, 0.9, 2.2, 2.8, 4.1];
        let f = ols(&x, &y).unwrap();
        let half = 0.5 * (f.slope_ci.1 - f.slope_ci.0);
        assert!((half / f.slope_se - 3.182446).abs() < 1e-5);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, s) = mean_stderr(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 0.0);
    }
}
