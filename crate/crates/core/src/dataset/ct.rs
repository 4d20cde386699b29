//! CT slice stacks described by a JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, HuImage};
use crate::run::RunManifest;

/// On-disk manifest: slice paths relative to the manifest's directory and the
/// inclusive range of slices that carry lung tissue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtManifest {
    pub patient_id: String,
    pub slices: Vec<String>,
    pub keep_range: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub patient_id: String,
    slices: Vec<HuImage>,
    keep_range: (usize, usize),
    /// Source files, parallel to `slices` (empty for in-memory volumes).
    pub paths: Vec<PathBuf>,
}

impl CtVolume {
    pub fn new(patient_id: impl Into<String>, slices: Vec<HuImage>, keep_range: (usize, usize)) -> Result<Self> {
        let patient_id = patient_id.into();
        let first = slices
            .first()
            .ok_or_else(|| Error::Invalid(format!("patient {patient_id}: empty slice stack")))?;
        let (w, h) = (first.width(), first.height());
        if let Some((i, s)) = slices
            .iter()
            .enumerate()
            .find(|(_, s)| s.width() != w || s.height() != h)
        {
            return Err(Error::Shape(format!(
                "patient {patient_id}: slice {i} is {}x{}, expected {w}x{h}",
                s.width(),
                s.height()
            )));
        }
        let (top, bottom) = keep_range;
        if top > bottom || bottom >= slices.len() {
            return Err(Error::Invalid(format!(
                "patient {patient_id}: keep_range ({top}, {bottom}) out of bounds for {} slices",
                slices.len()
            )));
        }
        Ok(CtVolume {
            patient_id,
            slices,
            keep_range,
            paths: Vec::new(),
        })
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[HuImage] {
        &self.slices
    }

    pub fn keep_range(&self) -> (usize, usize) {
        self.keep_range
    }

    pub fn kept_indices(&self) -> std::ops::RangeInclusive<usize> {
        self.keep_range.0..=self.keep_range.1
    }

    pub fn kept(&self) -> &[HuImage] {
        &self.slices[self.kept_indices()]
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }
}

pub fn read_manifest(path: &Path) -> Result<CtManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads every slice named by the manifest, in manifest order.
pub fn load_ct_stack(manifest_path: &Path) -> Result<CtVolume> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let paths: Vec<PathBuf> = manifest.slices.iter().map(|s| base.join(s)).collect();
    let mut slices = Vec::with_capacity(paths.len());
    for p in &paths {
        if !p.is_file() {
            return Err(Error::format(p, "slice file not found"));
        }
        slices.push(image::read_hu_slice(p)?);
    }
    let mut vol = CtVolume::new(
        manifest.patient_id,
        slices,
        (manifest.keep_range[0], manifest.keep_range[1]),
    )
    .map_err(|e| Error::format(manifest_path, e.to_string()))?;
    vol.paths = paths;
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_stack(dir: &Path, n: usize, keep: [usize; 2], sizes: &[(usize, usize)]) -> PathBuf {
        let mut names = Vec::new();
        for i in 0..n {
            let (w, h) = sizes.get(i).copied().unwrap_or(sizes[0]);
            let name = format!("s{i:03}.pgm");
            image::write_hu_slice(&dir.join(&name), &HuImage::filled(w, h, -500.0 + i as f32), &[]).unwrap();
            names.push(name);
        }
        let m = CtManifest {
            patient_id: "P1".into(),
            slices: names,
            keep_range: keep,
            run: None,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        path
    }

    #[test]
    fn full_range() {
        let dir = tempfile::tempdir().unwrap();
        let vol = load_ct_stack(&write_stack(dir.path(), 3, [0, 2], &[(4, 4)])).unwrap();
        assert_eq!(vol.depth(), 3);
        assert_eq!(vol.kept().len(), 3);
        assert_eq!(vol.slices()[2].get(0, 0), -498.0);
    }

    #[test]
    fn partial_range() {
        let dir = tempfile::tempdir().unwrap();
        let vol = load_ct_stack(&write_stack(dir.path(), 30, [5, 24], &[(2, 2)])).unwrap();
        assert_eq!(vol.kept().len(), 20);
        assert_eq!(vol.kept()[0].get(0, 0), -495.0);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stack(dir.path(), 3, [0, 2], &[(4, 4)]);
        std::fs::remove_file(dir.path().join("s001.pgm")).unwrap();
        let err = load_ct_stack(&path).unwrap_err().to_string();
        assert!(err.contains("s001.pgm"), "{err}");
    }

    #[test]
    fn bad_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stack(dir.path(), 2, [0, 1], &[(4, 4), (4, 5)]);
        assert!(load_ct_stack(&path).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = write_stack(dir.path(), 2, [0, 2], &[(4, 4)]);
        assert!(load_ct_stack(&path).unwrap_err().to_string().contains("keep_range"));
        let dir = tempfile::tempdir().unwrap();
        let path = write_stack(dir.path(), 3, [2, 1], &[(4, 4)]);
        assert!(load_ct_stack(&path).is_err());
    }
}
