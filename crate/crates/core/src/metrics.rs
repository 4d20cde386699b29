//! RMSE, Laplace log-likelihood scoring, σ estimation and distribution fits.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slope::{reconstruct_fvc, rezero_times};

/// Clipping applied before scoring: `σ ← max(σ, sigma_min)` and
/// `|Δ| ← min(|Δ|, error_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub sigma_min: f64,
    pub error_max: f64,
}

impl Clip {
    /// Thresholds used by the public FVC progression leaderboard.
    pub const COMPETITION: Clip = Clip {
        sigma_min: 70.0,
        error_max: 1000.0,
    };
}

/// Where the σ of the Laplace score comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SigmaSource {
    Fixed { sigma: f64 },
    /// `σ = √2 · b`, with `b` the mean absolute training residual.
    TrainResidualLaplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPolicy {
    pub source: SigmaSource,
    pub clip: Option<Clip>,
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy {
            source: SigmaSource::TrainResidualLaplace,
            clip: None,
        }
    }
}

impl SigmaPolicy {
    pub fn fixed(sigma: f64) -> Self {
        SigmaPolicy {
            source: SigmaSource::Fixed { sigma },
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SigmaSource::Fixed { sigma } = self.source {
            if !(sigma > 0.0) {
                return Err(Error::Invalid(format!("fixed sigma must be > 0, got {sigma}")));
            }
        }
        if let Some(c) = self.clip {
            if !(c.sigma_min > 0.0 && c.error_max > 0.0) {
                return Err(Error::Invalid("clip thresholds must be positive".into()));
            }
        }
        Ok(())
    }

    /// Resolves the σ to score with, given the σ estimated on training data.
    pub fn resolve(&self, train_sigma: f64) -> f64 {
        match self.source {
            SigmaSource::Fixed { sigma } => sigma,
            SigmaSource::TrainResidualLaplace => train_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceParams {
    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.mu).abs() / self.b).exp() / (2.0 * self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianParams {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    pub gaussian: GaussianParams,
    pub laplace: LaplaceParams,
    pub histogram: Histogram,
}

fn check_pairs(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Invalid("empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mean_absolute_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let sae: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).abs()).sum();
    Ok(sae / pred.len() as f64)
}

/// Laplace log-likelihood of one prediction: `−ln(√2σ) − √2|Δ|/σ`.
pub fn laplace_ll(pred: f64, truth: f64, sigma: f64, clip: Option<Clip>) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let mut sigma = sigma;
    let mut delta = (pred - truth).abs();
    if let Some(c) = clip {
        sigma = sigma.max(c.sigma_min);
        delta = delta.min(c.error_max);
    }
    // σ / (1/√2) rather than √2·σ keeps ln(√2σ) exactly zero at σ = 1/√2;
    // subtracting from 0.0 avoids a negative zero there.
    Ok(0.0 - (sigma / FRAC_1_SQRT_2).ln() - SQRT_2 * delta / sigma)
}

/// Mean Laplace log-likelihood over scored visits, one σ per visit.
pub fn mean_laplace_ll(pred: &[f64], truth: &[f64], sigma: &[f64], clip: Option<Clip>) -> Result<f64> {
    check_pairs(pred, truth)?;
    if sigma.len() != pred.len() {
        return Err(Error::Invalid("sigma length mismatch".into()));
    }
    let mut total = 0.0;
    for ((&p, &t), &s) in pred.iter().zip(truth).zip(sigma) {
        total += laplace_ll(p, t, s, clip)?;
    }
    Ok(total / pred.len() as f64)
}

/// Location used for the Laplace scale estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualCenter {
    #[default]
    Zero,
    Median,
}

/// Lower bound on σ (mL).
pub const SIGMA_FLOOR: f64 = 1.0;

/// Laplace MLE of the residual scale, converted with `σ² = 2b²`.
pub fn estimate_sigma(residuals: &[f64], center: ResidualCenter) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Invalid("no residuals".into()));
    }
    let mu = match center {
        ResidualCenter::Zero => 0.0,
        ResidualCenter::Median => median(residuals),
    };
    let b = residuals.iter().map(|r| (r - mu).abs()).sum::<f64>() / residuals.len() as f64;
    Ok((SQRT_2 * b).max(SIGMA_FLOOR))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub const MIN_BINS: usize = 20;
pub const MAX_BINS: usize = 100;

/// Freedman–Diaconis histogram, bin count clamped to `[MIN_BINS, MAX_BINS]`.
pub fn histogram(values: &[f64]) -> Result<Histogram> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Invalid("all values identical".into()));
    }
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let fd_width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = if fd_width > 0.0 {
        ((hi - lo) / fd_width).ceil() as usize
    } else {
        MIN_BINS
    }
    .clamp(MIN_BINS, MAX_BINS);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Maximum-likelihood Gaussian and Laplace fits plus a histogram.
pub fn fit_distributions(values: &[f64]) -> Result<DistributionFit> {
    if values.len() < 2 {
        return Err(Error::Invalid("need at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite value".into()));
    }
    let histogram = histogram(values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mu = median(values);
    let b = values.iter().map(|v| (v - mu).abs()).sum::<f64>() / n;
    Ok(DistributionFit {
        gaussian: GaussianParams { mean, sd: var.sqrt() },
        laplace: LaplaceParams { mu, b },
        histogram,
    })
}

/// A patient's predicted slope alongside its observed visits.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub predicted_slope: f64,
    pub true_slope: f64,
    /// `(week, fvc)` sorted by week; the first entry is the baseline.
    pub visits: Vec<(f64, f64)>,
}

impl PatientPrediction {
    /// FVC reconstructed at every visit from the baseline and the slope.
    pub fn reconstructed(&self) -> Vec<f64> {
        let times: Vec<f64> = self.visits.iter().map(|v| v.0).collect();
        reconstruct_fvc(self.predicted_slope, self.visits[0].1, &rezero_times(&times))
    }

    /// `(predicted, observed)` at every non-baseline visit.
    pub fn scored_pairs(&self) -> Vec<(f64, f64)> {
        self.reconstructed()
            .into_iter()
            .zip(&self.visits)
            .skip(1)
            .map(|(p, &(_, t))| (p, t))
            .collect()
    }
}

/// FVC residuals (predicted − observed) over all non-baseline visits.
pub fn fvc_residuals(predictions: &[PatientPrediction]) -> Vec<f64> {
    predictions
        .iter()
        .flat_map(|p| p.scored_pairs().into_iter().map(|(a, b)| a - b))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub predicted_slope: f64,
    pub true_slope: f64,
    pub visits_scored: usize,
    pub rmse: f64,
    pub lll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lll_clipped: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub patients: usize,
    pub visits_scored: usize,
    pub rmse: f64,
    pub lll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lll_clipped: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<crate::run::RunManifest>,
    pub sigma_policy: SigmaPolicy,
    /// σ actually used for scoring, before clipping.
    pub sigma: f64,
    pub patients: Vec<PatientMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Scores every non-baseline visit. Aggregates pool all visits rather than
/// averaging per-patient scores. When the policy clips, both the raw and the
/// clipped Laplace score are reported.
pub fn score_predictions(predictions: &[PatientPrediction], sigma: f64, policy: &SigmaPolicy) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Invalid("no patients to score".into()));
    }
    policy.validate()?;
    let mut rows = Vec::with_capacity(predictions.len());
    let (mut all_p, mut all_t) = (Vec::new(), Vec::new());
    for p in predictions {
        let pairs = p.scored_pairs();
        if pairs.is_empty() {
            return Err(Error::Invalid(format!("patient {} has no visit after baseline", p.patient_id)));
        }
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let sig = vec![sigma; pred.len()];
        rows.push(PatientMetrics {
            patient_id: p.patient_id.clone(),
            predicted_slope: p.predicted_slope,
            true_slope: p.true_slope,
            visits_scored: pred.len(),
            rmse: rmse(&pred, &truth)?,
            lll: mean_laplace_ll(&pred, &truth, &sig, None)?,
            lll_clipped: policy.clip.map(|c| mean_laplace_ll(&pred, &truth, &sig, Some(c))).transpose()?,
        });
        all_p.extend(pred);
        all_t.extend(truth);
    }
    let sig = vec![sigma; all_p.len()];
    let aggregate = AggregateMetrics {
        patients: rows.len(),
        visits_scored: all_p.len(),
        rmse: rmse(&all_p, &all_t)?,
        lll: mean_laplace_ll(&all_p, &all_t, &sig, None)?,
        lll_clipped: policy.clip.map(|c| mean_laplace_ll(&all_p, &all_t, &sig, Some(c))).transpose()?,
    };
    Ok(MetricsReport {
        run: None,
        sigma_policy: *policy,
        sigma,
        patients: rows,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2690.0], &[2693.0]).unwrap(), 3.0);
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn laplace_examples() {
        assert_eq!(laplace_ll(5.0, 5.0, FRAC_1_SQRT_2, None).unwrap(), 0.0);
        let v = laplace_ll(1.0, 1.0, SQRT_2, None).unwrap();
        assert!((v + LN_2).abs() < 1e-12);
        let v = laplace_ll(2790.0, 2690.0, 70.0, None).unwrap();
        assert!((v - -6.615373921433754).abs() < 1e-12, "{v}");
        assert!(laplace_ll(0.0, 0.0, 0.0, None).is_err());
        assert!(laplace_ll(0.0, 0.0, -1.0, None).is_err());
    }

    #[test]
    fn clipping_flattens_both_tails() {
        let clip = Some(Clip::COMPETITION);
        let a = laplace_ll(0.0, 300.0, 10.0, clip).unwrap();
        let b = laplace_ll(0.0, 300.0, 69.0, clip).unwrap();
        assert_eq!(a, b);
        let a = laplace_ll(0.0, 1500.0, 200.0, clip).unwrap();
        let b = laplace_ll(0.0, 4000.0, 200.0, clip).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_estimates() {
        assert_eq!(estimate_sigma(&[0.0, 0.0], ResidualCenter::Zero).unwrap(), SIGMA_FLOOR);
        let s = estimate_sigma(&[70.0], ResidualCenter::Zero).unwrap();
        assert!((s - 98.99494936611666).abs() < 1e-9);
        let s = estimate_sigma(&[-50.0, 50.0], ResidualCenter::Zero).unwrap();
        assert!((s - 70.71067811865476).abs() < 1e-9);
        // median-centered: residuals {-50, 50} have median 0 too
        let s = estimate_sigma(&[10.0, 30.0], ResidualCenter::Median).unwrap();
        assert!((s - SQRT_2 * 10.0).abs() < 1e-12);
        assert!(estimate_sigma(&[], ResidualCenter::Zero).is_err());
    }

    #[test]
    fn fit_three_points() {
        let f = fit_distributions(&[1.0, 2.0, 3.0]).unwrap();
        assert!((f.gaussian.mean - 2.0).abs() < 1e-15);
        assert!((f.gaussian.sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(f.laplace.mu, 2.0);
        assert!((f.laplace.b - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.histogram.counts.iter().sum::<usize>(), 3);
        assert!(fit_distributions(&[4.0, 4.0, 4.0]).is_err());
        assert!(fit_distributions(&[4.0]).is_err());
    }

    #[test]
    fn symmetric_data_location_matches_mean() {
        let f = fit_distributions(&[-3.0, -1.0, 0.0, 1.0, 3.0]).unwrap();
        assert_eq!(f.gaussian.mean, f.laplace.mu);
    }

    #[test]
    fn histogram_bin_count_is_clamped() {
        let few: Vec<f64> = (0..5).map(f64::from).collect();
        assert_eq!(histogram(&few).unwrap().counts.len(), MIN_BINS);
        let many: Vec<f64> = (0..1_000_000).map(|i| f64::from(i).powi(3)).collect();
        assert_eq!(histogram(&many).unwrap().counts.len(), MAX_BINS);
    }

    #[test]
    fn pdfs_integrate_to_one() {
        let lap = LaplaceParams { mu: 1.0, b: 2.0 };
        let gau = GaussianParams { mean: 1.0, sd: 2.0 };
        let h = 0.001;
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..80_000 {
            let x = -39.0 + h * (i as f64 + 0.5);
            a += lap.pdf(x) * h;
            b += gau.pdf(x) * h;
        }
        assert!((a - 1.0).abs() < 1e-6 && (b - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn lll_non_increasing_in_error(d1 in 0.0f64..3000.0, d2 in 0.0f64..3000.0, sigma in 1.0f64..1000.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(laplace_ll(lo, 0.0, sigma, None).unwrap() >= laplace_ll(hi, 0.0, sigma, None).unwrap());
        }

        #[test]
        fn lll_peaks_at_sqrt2_delta(delta in 1.0f64..1000.0) {
            let best = SQRT_2 * delta;
            let at_best = laplace_ll(delta, 0.0, best, None).unwrap();
            for i in 1..400 {
                let s = best * (i as f64) / 100.0;
                prop_assert!(laplace_ll(delta, 0.0, s, None).unwrap() <= at_best + 1e-12);
            }
        }

        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..40)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&p, &t).unwrap();
            let m = mean_absolute_error(&p, &t).unwrap();
            prop_assert!(r + 1e-9 >= m && m >= 0.0);
        }

        #[test]
        fn sigma_scale_equivariance(res in prop::collection::vec(10.0f64..500.0, 1..30), k in 0.5f64..10.0) {
            let a = estimate_sigma(&res, ResidualCenter::Zero).unwrap();
            let scaled: Vec<f64> = res.iter().map(|r| r * k).collect();
            let b = estimate_sigma(&scaled, ResidualCenter::Zero).unwrap();
            prop_assert!((b - k * a).abs() < 1e-9 * b);
        }
    }

    fn prediction(id: &str, slope: f64, visits: &[(f64, f64)]) -> PatientPrediction {
        PatientPrediction {
            patient_id: id.into(),
            predicted_slope: slope,
            true_slope: slope,
            visits: visits.to_vec(),
        }
    }

    #[test]
    fn perfect_predictor_scores_exactly() {
        let p = prediction("a", -5.0, &[(-3.0, 2000.0), (1.0, 1980.0), (9.0, 1940.0)]);
        let r = score_predictions(&[p], FRAC_1_SQRT_2, &SigmaPolicy::fixed(FRAC_1_SQRT_2)).unwrap();
        assert_eq!(r.aggregate.rmse, 0.0);
        assert_eq!(r.aggregate.lll, 0.0);
        assert_eq!(r.aggregate.visits_scored, 2);
        assert!(r.aggregate.lll_clipped.is_none());
    }

    #[test]
    fn two_patient_fixture_by_hand() {
        // a: baseline 2000 at week 0, slope 0 predicts 2000; truth 1990, 1970 -> errors 10, 30
        // b: baseline 3000 at week 5, slope -10 predicts 2950 at week 10; truth 2990 -> error 40
        let a = prediction("a", 0.0, &[(0.0, 2000.0), (4.0, 1990.0), (8.0, 1970.0)]);
        let b = prediction("b", -10.0, &[(5.0, 3000.0), (10.0, 2990.0)]);
        let policy = SigmaPolicy {
            source: SigmaSource::Fixed { sigma: 100.0 },
            clip: Some(Clip::COMPETITION),
        };
        let r = score_predictions(&[a, b], 100.0, &policy).unwrap();
        let rmse_all = ((100.0 + 900.0 + 1600.0) / 3.0f64).sqrt();
        assert!((r.aggregate.rmse - rmse_all).abs() < 1e-12);
        let ll = |d: f64| -(SQRT_2 * 100.0f64).ln() - SQRT_2 * d / 100.0;
        assert!((r.aggregate.lll - (ll(10.0) + ll(30.0) + ll(40.0)) / 3.0).abs() < 1e-12);
        assert!((r.patients[0].rmse - 500.0f64.sqrt()).abs() < 1e-12);
        assert!((r.patients[1].lll - ll(40.0)).abs() < 1e-12);
        assert_eq!(r.aggregate.lll_clipped, Some(r.aggregate.lll));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn residuals_skip_baseline() {
        let p = prediction("a", 1.0, &[(0.0, 10.0), (2.0, 11.0)]);
        assert_eq!(fvc_residuals(&[p]), vec![1.0]);
        assert!(score_predictions(&[], 1.0, &SigmaPolicy::default()).is_err());
    }
}
