//! Closed-form least-squares line fits for FVC series.
//!
//! An FVC series `(t_j, m_j)` is modelled as `m_j = c + s * t_j`. With the
//! times re-zeroed so the first visit sits at `t = 0`, the intercept `c` is
//! the baseline measurement and `s` is the decline rate (mL/week) used as the
//! regression target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intercept (mL) and slope (mL/week) of a fitted FVC line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
}

/// Paired visit times (weeks) and measurements (mL).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DesignPair {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Invalid(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::SingularDesign(format!(
                "need at least two points, got {}",
                times.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite time or value".into()));
        }
        let first = times[0];
        if times.iter().all(|&t| t == first) {
            return Err(Error::SingularDesign("all timestamps are equal".into()));
        }
        Ok(DesignPair { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Least-squares fit through the normal equations `beta = (X^T X)^-1 X^T y`
/// with design rows `[1, t_j]`.
pub fn ols_fit(pair: &DesignPair) -> Result<LineFit> {
    let n = pair.len() as f64;
    // Centering keeps the 2x2 system well conditioned for large week offsets.
    let t_mean = pair.times.iter().sum::<f64>() / n;
    let m_mean = pair.values.iter().sum::<f64>() / n;

    // Off-diagonal terms of X^T X vanish for the centered design.
    let mut stt = 0.0;
    let mut stm = 0.0;
    for (&t, &m) in pair.times.iter().zip(&pair.values) {
        let dt = t - t_mean;
        stt += dt * dt;
        stm += dt * (m - m_mean);
    }
    if stt <= 0.0 || !stt.is_finite() {
        return Err(Error::SingularDesign("zero time variance".into()));
    }
    let slope = stm / stt;
    let intercept = m_mean - slope * t_mean;
    Ok(LineFit { intercept, slope })
}

/// Slope via the double-sum expression
/// `[(n-1) Σ t_j m_j - Σ_j Σ_{l≠j} t_l m_j] / [n Σ t_j² - (Σ t_j)²]`,
/// evaluated literally. Quadratic in `n`; production code uses [`ols_fit`].
pub fn slope_closed_form(pair: &DesignPair) -> Result<f64> {
    let n = pair.len();
    let t = &pair.times;
    let m = &pair.values;

    let sum_tm: f64 = t.iter().zip(m).map(|(a, b)| a * b).sum();
    let mut cross = 0.0;
    for j in 0..n {
        for l in 0..n {
            if l != j {
                cross += t[l] * m[j];
            }
        }
    }
    let numerator = (n as f64 - 1.0) * sum_tm - cross;

    let sum_t: f64 = t.iter().sum();
    let sum_tt: f64 = t.iter().map(|v| v * v).sum();
    let denominator = n as f64 * sum_tt - sum_t * sum_t;
    if denominator == 0.0 {
        return Err(Error::SingularDesign("zero denominator".into()));
    }
    Ok(numerator / denominator)
}

/// Residual sum of squares `‖M − τβ‖²` and its gradient `−2τᵀM + 2τᵀτβ`
/// with respect to `(intercept, slope)`.
pub fn rss_and_gradient(pair: &DesignPair, beta: LineFit) -> (f64, [f64; 2]) {
    let mut rss = 0.0;
    let mut grad = [0.0; 2];
    for (&t, &m) in pair.times.iter().zip(&pair.values) {
        let r = m - (beta.intercept + beta.slope * t);
        rss += r * r;
        grad[0] -= 2.0 * r;
        grad[1] -= 2.0 * r * t;
    }
    (rss, grad)
}

/// Evaluates the line `m_1 + slope * t` at each time.
pub fn reconstruct_fvc(slope: f64, baseline: f64, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| baseline + slope * t).collect()
}

/// Shifts times so the earliest one is zero.
pub fn rezero_times(times: &[f64]) -> Vec<f64> {
    let origin = times.iter().copied().fold(f64::INFINITY, f64::min);
    times.iter().map(|t| t - origin).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(t: &[f64], m: &[f64]) -> DesignPair {
        DesignPair::new(t.to_vec(), m.to_vec()).unwrap()
    }

    fn textbook_slope(t: &[f64], m: &[f64]) -> f64 {
        let n = t.len() as f64;
        let st: f64 = t.iter().sum();
        let sm: f64 = m.iter().sum();
        let stm: f64 = t.iter().zip(m).map(|(a, b)| a * b).sum();
        let stt: f64 = t.iter().map(|a| a * a).sum();
        (n * stm - st * sm) / (n * stt - st * st)
    }

    #[test]
    fn two_point_interpolation() {
        let fit = ols_fit(&pair(&[0.0, 1.0], &[0.0, 1.0])).unwrap();
        assert!((fit.intercept).abs() < 1e-15);
        assert!((fit.slope - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_series_is_flat() {
        let fit = ols_fit(&pair(&[0.0, 1.0, 2.0, 3.0], &[5.0; 4])).unwrap();
        assert!((fit.intercept - 5.0).abs() < 1e-12);
        assert!(fit.slope.abs() < 1e-12);
        assert_eq!(slope_closed_form(&pair(&[0.0, 2.0], &[3.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn double_sum_on_exact_line() {
        let s = slope_closed_form(&pair(&[0.0, 1.0, 2.0, 3.0], &[2.0, 4.0, 6.0, 8.0])).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_designs_rejected() {
        assert!(matches!(
            DesignPair::new(vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 3.0]),
            Err(Error::SingularDesign(_))
        ));
        assert!(matches!(
            DesignPair::new(vec![1.0], vec![1.0]),
            Err(Error::SingularDesign(_))
        ));
        assert!(DesignPair::new(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_rss_and_gradient() {
        let p = pair(&[0.0, 4.0, 9.0], &[10.0, 2.0, -8.0]);
        let (rss, grad) = rss_and_gradient(&p, LineFit { intercept: 10.0, slope: -2.0 });
        assert_eq!(rss, 0.0);
        assert_eq!(grad, [0.0, 0.0]);
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruct_fvc(0.0, 2690.0, &[0.0, 7.0, 31.0]), vec![2690.0; 3]);
        assert_eq!(
            reconstruct_fvc(-5.0, 3000.0, &[0.0, 10.0, 20.0]),
            vec![3000.0, 2950.0, 2900.0]
        );
    }

    #[test]
    fn rezero_moves_first_visit_to_origin() {
        assert_eq!(rezero_times(&[-4.0, 2.0, 10.0]), vec![0.0, 6.0, 14.0]);
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-20.0f64..80.0, n),
                prop::collection::vec(800.0f64..6400.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn three_slope_routes_agree((t, m) in series()) {
            prop_assume!(t.iter().any(|&v| (v - t[0]).abs() > 1e-3));
            let p = pair(&t, &m);
            let a = ols_fit(&p).unwrap().slope;
            let b = slope_closed_form(&p).unwrap();
            let c = textbook_slope(&t, &m);
            let scale = a.abs().max(1e-6);
            prop_assert!((a - b).abs() / scale < 1e-7);
            prop_assert!((a - c).abs() / scale < 1e-7);
        }

        #[test]
        fn affine_equivariance((t, m) in series(), k in -50.0f64..50.0, g in 0.1f64..4.0) {
            prop_assume!(t.iter().any(|&v| (v - t[0]).abs() > 1e-3));
            let base = ols_fit(&pair(&t, &m)).unwrap().slope;
            let tol = 1e-7 * base.abs().max(1.0);
            let offset: Vec<f64> = m.iter().map(|v| v + k).collect();
            prop_assert!((ols_fit(&pair(&t, &offset)).unwrap().slope - base).abs() < tol);
            let scaled: Vec<f64> = m.iter().map(|v| v * g).collect();
            prop_assert!((ols_fit(&pair(&t, &scaled)).unwrap().slope - g * base).abs() < tol * g);
            let shifted: Vec<f64> = t.iter().map(|v| v + k).collect();
            prop_assert!((ols_fit(&pair(&shifted, &m)).unwrap().slope - base).abs() < tol);
        }

        #[test]
        fn gradient_vanishes_at_optimum((t, m) in series()) {
            prop_assume!(t.iter().any(|&v| (v - t[0]).abs() > 1e-3));
            let p = pair(&t, &m);
            let (_, g) = rss_and_gradient(&p, ols_fit(&p).unwrap());
            let scale: f64 = t.iter().zip(&m).map(|(a, b)| (a * b).abs() + b.abs()).sum();
            prop_assert!(g[0].abs().max(g[1].abs()) < 1e-8 * scale);
        }
    }
}
