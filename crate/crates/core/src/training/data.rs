use rayon::prelude::*;

use super::config::MaskPolicy;
use crate::dataset::{encode_clinical, ClinicalRecord, FvcSeries, NormStats, PatientSample};
use crate::error::{Error, Result};
use crate::image::HuImage;
use crate::lung_mask::{self, BinaryMask, MaskParams};
use crate::model::{prepare_slice, SliceInput};

/// A patient with its kept slices windowed, resized and paired with masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPatient {
    pub patient_id: String,
    pub record: ClinicalRecord,
    pub fvc: FvcSeries,
    /// Least-squares FVC slope, mL/week.
    pub target: f64,
    /// `(image, mask)` at model resolution, one per kept slice.
    pub slices: Vec<(Vec<f32>, Vec<f32>)>,
    /// Slices that fell back to an all-ones mask.
    pub mask_fallbacks: usize,
}

impl PreparedPatient {
    /// Model inputs with the clinical vector normalized by `norm`.
    pub fn inputs(&self, norm: &NormStats) -> Vec<SliceInput> {
        let clinical = encode_clinical(&self.record, norm);
        self.slices
            .iter()
            .map(|(image, mask)| SliceInput {
                image: image.clone(),
                mask: mask.clone(),
                clinical,
            })
            .collect()
    }
}

fn slice_mask(
    slice: &HuImage,
    stored: Option<&std::path::Path>,
    params: &MaskParams,
    policy: &MaskPolicy,
) -> Result<(Option<BinaryMask>, bool)> {
    if !policy.enabled {
        return Ok((None, false));
    }
    if let Some(path) = stored.map(lung_mask::mask_path_for).filter(|p| p.exists()) {
        let m = lung_mask::read_mask(&path)?;
        return Ok((Some(m), false));
    }
    if policy.fallback_ones {
        let (m, fell_back) = lung_mask::extract_or_full(slice, params)?;
        Ok((Some(m), fell_back))
    } else {
        Ok((Some(lung_mask::extract_lung_mask(slice, params)?), false))
    }
}

/// Prepares one patient. Masks saved next to the slices (`.mask.pgm`) are
/// used when present; otherwise they are extracted here.
pub fn prepare_patient(sample: &PatientSample, image_size: usize, policy: &MaskPolicy) -> Result<PreparedPatient> {
    let target = sample.slope_target()?;
    let vol = &sample.volume;
    let params = policy.params.unwrap_or_else(|| MaskParams::for_size(vol.width(), vol.height()));
    let clinical = encode_clinical(&sample.clinical, &NormStats::new(0.0, 1.0)?);
    let prepared: Vec<(SliceInput, bool)> = vol
        .kept_indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| {
            let slice = &vol.slices()[i];
            let (mask, fell_back) = slice_mask(slice, vol.paths.get(i).map(|p| p.as_path()), &params, policy)
                .map_err(|e| match e {
                    Error::NoLungRegion => Error::Invalid(format!(
                        "patient {}, slice {i}: no lung region",
                        sample.id()
                    )),
                    other => other,
                })?;
            Ok((prepare_slice(slice, mask.as_ref(), clinical, image_size)?, fell_back))
        })
        .collect::<Result<_>>()?;
    let mask_fallbacks = prepared.iter().filter(|p| p.1).count();
    if mask_fallbacks > 0 {
        log::warn!("patient {}: {mask_fallbacks} slice(s) used an all-ones mask", sample.id());
    }
    Ok(PreparedPatient {
        patient_id: sample.id().to_string(),
        record: sample.clinical.clone(),
        fvc: sample.fvc.clone(),
        target,
        slices: prepared.into_iter().map(|(s, _)| (s.image, s.mask)).collect(),
        mask_fallbacks,
    })
}

/// Prepares every patient; those whose FVC series defines no slope are
/// skipped with a warning and reported as `(patient_id, reason)`.
pub fn prepare_patients(
    samples: &[PatientSample],
    image_size: usize,
    policy: &MaskPolicy,
) -> Result<(Vec<PreparedPatient>, Vec<(String, String)>)> {
    let mut kept = Vec::with_capacity(samples.len());
    let mut skipped = Vec::new();
    for s in samples {
        match s.slope_target() {
            Ok(_) => kept.push(prepare_patient(s, image_size, policy)?),
            Err(e @ (Error::SingularDesign(_) | Error::Invalid(_))) => {
                log::warn!("skipping patient {}: {e}", s.id());
                skipped.push((s.id().to_string(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((kept, skipped))
}
