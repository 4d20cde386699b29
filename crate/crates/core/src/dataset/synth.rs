//! Deterministic synthetic cohorts for desk-scale runs.
//!
//! Clinical marginals follow the OSIC cohort summary (age 49–88, 79% male,
//! smoking 5/67/28%, baseline FVC 2690.47 ± 832.77 mL in [827, 6399]). Each CT
//! slice is a phantom: an elliptical soft-tissue body in air with two dark
//! elliptical lungs whose texture amplitude grows with the patient's decline
//! rate, so the images carry signal about the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::clinical::{ClinicalRecord, FvcSeries, Sex, Smoking};
use super::ct::CtVolume;
use super::PatientSample;
use crate::error::{Error, Result};
use crate::image::HuImage;

pub const AGE_RANGE: (u32, u32) = (49, 88);
pub const FVC_MEAN: f64 = 2690.47;
pub const FVC_SD: f64 = 832.77;
pub const FVC_RANGE: (f64, f64) = (827.0, 6399.0);
/// Latent slope distribution, mL/week, clipped to `SLOPE_RANGE`.
pub const SLOPE_MEAN: f64 = -4.0;
pub const SLOPE_SD: f64 = 3.0;
pub const SLOPE_RANGE: (f64, f64) = (-15.0, 5.0);

pub const AIR_HU: f32 = -1000.0;
pub const TISSUE_HU: f32 = 40.0;
pub const LUNG_HU: f32 = -850.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub patients: usize,
    /// Lung-bearing slices per patient; one lung-free slice is added above
    /// and below, outside the keep range.
    pub slices_per_patient: usize,
    pub image_size: usize,
    pub visits: usize,
    /// Standard deviation (mL) of the measurement noise added to each visit.
    pub noise_sd: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            patients: 8,
            slices_per_patient: 4,
            image_size: 64,
            visits: 6,
            noise_sd: 10.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::Invalid("synthetic spec needs at least one patient".into()));
        }
        if self.visits < 2 {
            return Err(Error::Invalid("synthetic spec needs at least two visits".into()));
        }
        if self.slices_per_patient == 0 {
            return Err(Error::Invalid("synthetic spec needs at least one slice".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Invalid("synthetic image_size must be >= 16".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Invalid("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Geometry of one phantom slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomGeometry {
    pub size: usize,
    /// Lung scale in `(0, 1]`; zero renders a lung-free slice.
    pub lung_scale: f64,
    /// Texture amplitude in HU.
    pub roughness: f64,
}

fn in_ellipse(r: f64, c: f64, cr: f64, cc: f64, ar: f64, ac: f64) -> bool {
    let y = (r - cr) / ar;
    let x = (c - cc) / ac;
    x * x + y * y <= 1.0
}

/// Ellipses `(center_row, center_col, semi_rows, semi_cols)` of the two lungs.
pub fn lung_ellipses(size: usize, lung_scale: f64) -> [(f64, f64, f64, f64); 2] {
    let n = size as f64;
    let c = (n - 1.0) / 2.0;
    let ar = 0.24 * n * lung_scale;
    let ac = 0.12 * n * lung_scale;
    [(c, c - 0.19 * n, ar, ac), (c, c + 0.19 * n, ar, ac)]
}

/// Renders a phantom slice and its ground-truth lung mask (row-major).
pub fn render_phantom<R: Rng>(geom: &PhantomGeometry, rng: &mut R) -> (HuImage, Vec<bool>) {
    let n = geom.size;
    let nf = n as f64;
    let c = (nf - 1.0) / 2.0;
    let lungs = lung_ellipses(n, geom.lung_scale);

    // three random plane waves with periods of 3-8 px
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let period = rng.random_range(3.0..8.0);
            let k = 2.0 * std::f64::consts::PI / period;
            (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let mut img = HuImage::filled(n, n, AIR_HU);
    let mut truth = vec![false; n * n];
    for r in 0..n {
        for col in 0..n {
            let (rf, cf) = (r as f64, col as f64);
            let jitter: f64 = rng.random_range(-5.0..5.0);
            let mut v = f64::from(AIR_HU) + jitter;
            if in_ellipse(rf, cf, c, c, 0.40 * nf, 0.46 * nf) {
                v = f64::from(TISSUE_HU) + jitter;
                if geom.lung_scale > 0.0 && lungs.iter().any(|&(lr, lc, ar, ac)| in_ellipse(rf, cf, lr, lc, ar, ac)) {
                    let tex: f64 = waves.iter().map(|&(kx, ky, ph)| (kx * cf + ky * rf + ph).sin()).sum::<f64>() / 3.0;
                    v = f64::from(LUNG_HU) + geom.roughness * tex + jitter;
                    truth[r * n + col] = true;
                }
            }
            img.set(r, col, v.round() as f32);
        }
    }
    (img, truth)
}

/// Texture amplitude (HU) for a decline rate (mL/week).
pub fn roughness_for_slope(slope: f64) -> f64 {
    20.0 + 10.0 * slope.abs()
}

fn truncated_normal<R: Rng>(rng: &mut R, dist: &Normal<f64>, lo: f64, hi: f64) -> f64 {
    loop {
        let v = dist.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

fn draw_record<R: Rng>(rng: &mut R, id: String) -> ClinicalRecord {
    let age = rng.random_range(AGE_RANGE.0..=AGE_RANGE.1);
    let sex = if rng.random_bool(0.79) { Sex::Male } else { Sex::Female };
    let u: f64 = rng.random();
    let smoking = if u < 0.05 {
        Smoking::CurrentlySmokes
    } else if u < 0.72 {
        Smoking::ExSmoker
    } else {
        Smoking::NeverSmoked
    };
    ClinicalRecord {
        patient_id: id,
        age,
        sex,
        smoking,
    }
}

/// Draws the clinical record, baseline FVC and latent slope of each patient
/// without rendering images.
pub fn draw_cohort(patients: usize, seed: u64) -> Vec<(ClinicalRecord, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fvc = Normal::new(FVC_MEAN, FVC_SD).expect("valid normal");
    let slope = Normal::new(SLOPE_MEAN, SLOPE_SD).expect("valid normal");
    (0..patients)
        .map(|i| {
            let record = draw_record(&mut rng, format!("P{i:04}"));
            let baseline = truncated_normal(&mut rng, &fvc, FVC_RANGE.0, FVC_RANGE.1);
            let s = slope.sample(&mut rng).clamp(SLOPE_RANGE.0, SLOPE_RANGE.1);
            (record, baseline, s)
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Vec<PatientSample>> {
    spec.validate()?;
    let cohort = draw_cohort(spec.patients, seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut out = Vec::with_capacity(spec.patients);
    for (i, (record, baseline, slope)) in cohort.into_iter().enumerate() {
        // independent stream per patient so cohort draws stay stable
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)));
        let mut week: i64 = rng.random_range(-12..=0);
        let t0 = week as f64;
        let mut points = Vec::with_capacity(spec.visits);
        for j in 0..spec.visits {
            if j > 0 {
                week += rng.random_range(4..=12);
            }
            let t = week as f64;
            let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let m = (baseline + slope * (t - t0) + eps).max(1.0);
            points.push((t, m));
        }
        let fvc = FvcSeries::new(points)?;

        let depth = spec.slices_per_patient + 2;
        let roughness = roughness_for_slope(slope);
        let mut slices = Vec::with_capacity(depth);
        for z in 0..depth {
            let lung_scale = if z == 0 || z == depth - 1 {
                0.0
            } else {
                // lungs widest mid-stack
                let pos = z as f64 / (depth - 1) as f64;
                0.7 + 0.3 * (std::f64::consts::PI * pos).sin()
            };
            let geom = PhantomGeometry {
                size: spec.image_size,
                lung_scale,
                roughness,
            };
            slices.push(render_phantom(&geom, &mut rng).0);
        }
        let volume = CtVolume::new(record.patient_id.clone(), slices, (1, depth - 2))?;
        out.push(PatientSample::new(record, volume, fvc)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            patients: 8,
            visits: 6,
            ..SynthSpec::default()
        };
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn marginals_stay_in_cohort_ranges() {
        for (rec, baseline, slope) in draw_cohort(2000, 11) {
            assert!((AGE_RANGE.0..=AGE_RANGE.1).contains(&rec.age));
            assert!((FVC_RANGE.0..=FVC_RANGE.1).contains(&baseline));
            assert!((SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope));
        }
    }

    #[test]
    fn baseline_mean_within_three_standard_errors() {
        let cohort = draw_cohort(2000, 5);
        let n = cohort.len() as f64;
        let mean = cohort.iter().map(|c| c.1).sum::<f64>() / n;
        // truncation at [827, 6399] shifts the mean by well under one SE
        assert!((mean - FVC_MEAN).abs() < 3.0 * FVC_SD / n.sqrt(), "{mean}");
    }

    #[test]
    fn rejects_empty_specs() {
        let base = SynthSpec::default();
        assert!(generate_synthetic(&SynthSpec { patients: 0, ..base }, 1).is_err());
        assert!(generate_synthetic(&SynthSpec { visits: 0, ..base }, 1).is_err());
    }

    #[test]
    fn keep_range_excludes_lung_free_slices() {
        let spec = SynthSpec {
            patients: 1,
            slices_per_patient: 3,
            ..SynthSpec::default()
        };
        let p = &generate_synthetic(&spec, 2).unwrap()[0];
        assert_eq!(p.volume.depth(), 5);
        assert_eq!(p.volume.keep_range(), (1, 3));
        let dark = |img: &HuImage| img.data().iter().filter(|&&v| v < -500.0).count();
        // lung-free slice only has the air outside the body
        assert!(dark(&p.volume.slices()[2]) > dark(&p.volume.slices()[0]));
    }

    #[test]
    fn noiseless_series_are_exact_lines() {
        let spec = SynthSpec {
            patients: 4,
            noise_sd: 0.0,
            ..SynthSpec::default()
        };
        for p in generate_synthetic(&spec, 3).unwrap() {
            let s = p.slope_target().unwrap();
            let t = p.fvc.rezeroed_times();
            let v = p.fvc.values();
            for (ti, vi) in t.iter().zip(&v) {
                assert!((v[0] + s * ti - vi).abs() < 1e-8);
            }
        }
    }
}
