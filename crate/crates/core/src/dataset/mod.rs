//! Patient data: clinical CSV, CT manifests, synthetic cohorts and folds.

pub mod clinical;
pub mod ct;
pub mod kfold;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use clinical::{
    encode_clinical, group_rows, parse_clinical_csv, parse_clinical_str, ClinicalRecord, ClinicalRow, ClinicalVector,
    FvcSeries, NormStats, Sex, Smoking,
};
pub use ct::{load_ct_stack, CtManifest, CtVolume};
pub use kfold::{kfold_indices, kfold_split, Fold};
pub use synth::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::image;
use crate::run::RunManifest;

pub const CLINICAL_FILE: &str = "clinical.csv";
pub const CT_DIR: &str = "ct";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PatientSample {
    pub clinical: ClinicalRecord,
    pub volume: CtVolume,
    pub fvc: FvcSeries,
}

impl PatientSample {
    pub fn new(clinical: ClinicalRecord, volume: CtVolume, fvc: FvcSeries) -> Result<Self> {
        if clinical.patient_id != volume.patient_id {
            return Err(Error::Invalid(format!(
                "clinical id {} does not match CT id {}",
                clinical.patient_id, volume.patient_id
            )));
        }
        Ok(PatientSample { clinical, volume, fvc })
    }

    pub fn id(&self) -> &str {
        &self.clinical.patient_id
    }

    pub fn slope_target(&self) -> Result<f64> {
        self.fvc.slope_target()
    }
}

/// A patient left out while loading, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub patients: Vec<PatientSample>,
    pub skipped: Vec<Skipped>,
}

pub fn manifest_path(dir: &Path, patient_id: &str) -> PathBuf {
    dir.join(CT_DIR).join(patient_id).join(MANIFEST_FILE)
}

/// Loads `clinical.csv` and `ct/<patient_id>/manifest.json` from `dir`.
///
/// Patients whose FVC series cannot define a slope are skipped with a
/// warning; every other failure is an error.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let rows = parse_clinical_csv(&dir.join(CLINICAL_FILE))?;
    let grouped = group_rows(&rows)?;
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for (id, g) in grouped {
        match g.series() {
            Ok(series) => usable.push((g.record, series)),
            Err(e) => {
                log::warn!("skipping patient {id}: {e}");
                skipped.push(Skipped {
                    patient_id: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    let patients = usable
        .into_par_iter()
        .map(|(record, series)| {
            let volume = load_ct_stack(&manifest_path(dir, &record.patient_id))?;
            PatientSample::new(record, volume, series)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset { patients, skipped })
}

fn write_clinical_csv(path: &Path, patients: &[PatientSample], run: &RunManifest) -> Result<()> {
    let mut text = format!("# {}\n{}\n", run.header_line(), clinical::CSV_HEADER.join(","));
    for p in patients {
        for &(week, fvc) in p.fvc.points() {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.clinical.patient_id, week, fvc, p.clinical.age, p.clinical.sex, p.clinical.smoking
            ));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes patients in the on-disk layout read by [`load_dataset`].
pub fn write_dataset(dir: &Path, patients: &[PatientSample], run: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_clinical_csv(&dir.join(CLINICAL_FILE), patients, run)?;
    let header = vec![run.header_line()];
    for p in patients {
        let pdir = dir.join(CT_DIR).join(p.id());
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut names = Vec::with_capacity(p.volume.depth());
        for (z, slice) in p.volume.slices().iter().enumerate() {
            let name = format!("slice_{z:03}.pgm");
            image::write_hu_slice(&pdir.join(&name), slice, &header)?;
            names.push(name);
        }
        let (top, bottom) = p.volume.keep_range();
        let manifest = CtManifest {
            patient_id: p.id().to_string(),
            slices: names,
            keep_range: [top, bottom],
            run: Some(run.clone()),
        };
        let path = pdir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            patients: 3,
            slices_per_patient: 2,
            image_size: 32,
            ..SynthSpec::default()
        };
        let patients = generate_synthetic(&spec, 1).unwrap();
        write_dataset(dir.path(), &patients, &RunManifest::new("synth", "d", 1)).unwrap();
        let mut loaded = load_dataset(dir.path()).unwrap();
        assert!(loaded.skipped.is_empty());
        for p in &mut loaded.patients {
            p.volume.paths.clear();
        }
        assert_eq!(loaded.patients, patients);
    }

    #[test]
    fn single_visit_patient_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            patients: 2,
            slices_per_patient: 1,
            image_size: 16,
            ..SynthSpec::default()
        };
        let patients = generate_synthetic(&spec, 1).unwrap();
        write_dataset(dir.path(), &patients, &RunManifest::new("synth", "d", 1)).unwrap();
        let csv = dir.path().join(CLINICAL_FILE);
        let text = fs::read_to_string(&csv).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with("P0001") || l.contains(&format!(",{},", patients[1].fvc.points()[0].0)))
            .collect();
        fs::write(&csv, kept.join("\n")).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.patients.len(), 1);
        assert_eq!(loaded.skipped[0].patient_id, "P0001");
    }
}
