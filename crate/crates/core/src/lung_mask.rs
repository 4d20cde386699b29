//! Lung segmentation: dark-component seeding, region growing from the seed
//! and dilation with a Euclidean disc.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, HuImage};

/// Pixels below this value (HU) are lung or air candidates.
pub const DARK_THRESHOLD_HU: f32 = -500.0;

/// Resolution at which the default dilation radius is defined.
pub const REFERENCE_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(BinaryMask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Homogeneity tolerance around the seed-neighbourhood mean, HU.
    pub tau: f32,
    pub connectivity: Connectivity,
    pub dilation_radius: usize,
    pub border_margin: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            tau: 250.0,
            connectivity: Connectivity::Eight,
            dilation_radius: 2,
            border_margin: 1,
        }
    }
}

impl MaskParams {
    /// Defaults with the dilation radius scaled from the 64 px reference to
    /// the given slice size.
    pub fn for_size(width: usize, height: usize) -> Self {
        let base = MaskParams::default();
        let scale = width.max(height) as f64 / REFERENCE_SIZE as f64;
        MaskParams {
            dilation_radius: ((base.dilation_radius as f64 * scale).round() as usize).max(1),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

fn neighbours(
    row: usize,
    col: usize,
    width: usize,
    height: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dr, dc)| {
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((r as usize, c as usize))
    })
}

/// Mean intensity of the 3x3 window around `(row, col)`, clipped at borders.
fn seed_mean(slice: &HuImage, row: usize, col: usize) -> f32 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for r in row.saturating_sub(1)..=(row + 1).min(slice.height() - 1) {
        for c in col.saturating_sub(1)..=(col + 1).min(slice.width() - 1) {
            sum += f64::from(slice.get(r, c));
            n += 1;
        }
    }
    (sum / n as f64) as f32
}

/// Grows the connected region of pixels within `tau` of the seed
/// neighbourhood mean. The criterion is fixed at the seed, so the result does
/// not depend on visiting order.
pub fn region_grow(slice: &HuImage, seed: (usize, usize), tau: f32, connectivity: Connectivity) -> Result<BinaryMask> {
    let (w, h) = (slice.width(), slice.height());
    let (sr, sc) = seed;
    if sr >= h || sc >= w {
        return Err(Error::Invalid(format!("seed ({sr}, {sc}) outside {h}x{w} slice")));
    }
    let mu = seed_mean(slice, sr, sc);
    let accept = |r: usize, c: usize| (slice.get(r, c) - mu).abs() <= tau;
    let mut mask = BinaryMask::empty(w, h);
    if !accept(sr, sc) {
        // the seed itself fails the test against its neighbourhood mean
        mask.set(sr, sc, true);
        return Ok(mask);
    }
    let mut queue = VecDeque::from([(sr, sc)]);
    mask.set(sr, sc, true);
    while let Some((r, c)) = queue.pop_front() {
        for (nr, nc) in neighbours(r, c, w, h, connectivity) {
            if !mask.get(nr, nc) && accept(nr, nc) {
                mask.set(nr, nc, true);
                queue.push_back((nr, nc));
            }
        }
    }
    Ok(mask)
}

/// Offsets of the digital disc `dx² + dy² ≤ r²`.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

pub fn dilate_circular(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width as isize, mask.height as isize);
    let disc = disc_offsets(radius);
    let mut out = mask.clone();
    for r in 0..h {
        for c in 0..w {
            if !mask.data[(r * w + c) as usize] {
                continue;
            }
            for &(dr, dc) in &disc {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < h && nc < w {
                    out.data[(nr * w + nc) as usize] = true;
                }
            }
        }
    }
    out
}

/// A connected component of a binary raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub touches_border: bool,
}

impl Component {
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sr, sc) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        (sr / n, sc / n)
    }

    /// Member pixel closest to the centroid, so the seed lies inside even for
    /// non-convex shapes.
    pub fn seed(&self) -> (usize, usize) {
        let (cr, cc) = self.centroid();
        *self
            .pixels
            .iter()
            .min_by(|a, b| {
                let da = (a.0 as f64 - cr).powi(2) + (a.1 as f64 - cc).powi(2);
                let db = (b.0 as f64 - cr).powi(2) + (b.1 as f64 - cc).powi(2);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .expect("non-empty component")
    }
}

/// Connected components in raster-scan order of their first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity, border_margin: usize) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let near_border = |r: usize, c: usize| {
        r < border_margin || c < border_margin || r + border_margin >= h || c + border_margin >= w
    };
    for start in 0..w * h {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([(start / w, start % w)]);
        let mut comp = Component {
            pixels: Vec::new(),
            touches_border: false,
        };
        while let Some((r, c)) = queue.pop_front() {
            comp.pixels.push((r, c));
            comp.touches_border |= near_border(r, c);
            for (nr, nc) in neighbours(r, c, w, h, connectivity) {
                let i = nr * w + nc;
                if mask.data[i] && !seen[i] {
                    seen[i] = true;
                    queue.push_back((nr, nc));
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Seeds for the two largest dark components not touching the border.
pub fn auto_seeds(slice: &HuImage, params: &MaskParams) -> Vec<(usize, usize)> {
    let dark = BinaryMask {
        width: slice.width(),
        height: slice.height(),
        data: slice.data().iter().map(|&v| v < DARK_THRESHOLD_HU).collect(),
    };
    let mut comps: Vec<Component> = connected_components(&dark, params.connectivity, params.border_margin)
        .into_iter()
        .filter(|c| !c.touches_border)
        .collect();
    // stable sort keeps raster order among equal sizes
    comps.sort_by(|a, b| b.pixels.len().cmp(&a.pixels.len()));
    comps.iter().take(2).map(Component::seed).collect()
}

/// Region growing from the given seeds, unioned and dilated.
pub fn grow_and_dilate(slice: &HuImage, seeds: &[(usize, usize)], params: &MaskParams) -> Result<BinaryMask> {
    params.validate()?;
    if seeds.is_empty() {
        return Err(Error::NoLungRegion);
    }
    let mut mask = BinaryMask::empty(slice.width(), slice.height());
    for &seed in seeds {
        mask = mask.union(&region_grow(slice, seed, params.tau, params.connectivity)?);
    }
    Ok(dilate_circular(&mask, params.dilation_radius))
}

pub fn extract_lung_mask(slice: &HuImage, params: &MaskParams) -> Result<BinaryMask> {
    params.validate()?;
    let seeds = auto_seeds(slice, params);
    grow_and_dilate(slice, &seeds, params)
}

/// Mask extraction that falls back to an all-ones mask when no lung is found.
pub fn extract_or_full(slice: &HuImage, params: &MaskParams) -> Result<(BinaryMask, bool)> {
    match extract_lung_mask(slice, params) {
        Ok(m) => Ok((m, false)),
        Err(Error::NoLungRegion) => Ok((BinaryMask::full(slice.width(), slice.height()), true)),
        Err(e) => Err(e),
    }
}

/// `slice_003.pgm` → `slice_003.mask.pgm`.
pub fn mask_path_for(slice_path: &Path) -> PathBuf {
    let stem = slice_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    slice_path.with_file_name(format!("{stem}.mask.pgm"))
}

pub fn write_mask(path: &Path, mask: &BinaryMask, comments: &[String]) -> Result<()> {
    let samples: Vec<u16> = mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    image::write_pgm(path, mask.width, mask.height, 255, &samples, comments)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let pgm = image::read_pgm(path)?;
    BinaryMask::new(pgm.width, pgm.height, pgm.samples.iter().map(|&v| v > 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_phantom() -> HuImage {
        let mut img = HuImage::filled(16, 16, 1000.0);
        for r in 4..8 {
            for c in 4..8 {
                img.set(r, c, -900.0);
            }
        }
        img
    }

    #[test]
    fn grows_exactly_the_block() {
        let m = region_grow(&block_phantom(), (5, 5), 100.0, Connectivity::Eight).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(m.get(r, c), (4..8).contains(&r) && (4..8).contains(&c));
            }
        }
    }

    #[test]
    fn background_seed_grows_background() {
        let m = region_grow(&block_phantom(), (0, 0), 100.0, Connectivity::Four).unwrap();
        assert_eq!(m.count(), 256 - 16);
        assert!(!m.get(5, 5));
        assert!(region_grow(&block_phantom(), (16, 0), 100.0, Connectivity::Four).is_err());
    }

    #[test]
    fn unit_disc_is_a_plus() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let d = dilate_circular(&m, 1);
        assert_eq!(d.count(), 5);
        for (r, c) in [(1, 2), (3, 2), (2, 1), (2, 3), (2, 2)] {
            assert!(d.get(r, c));
        }
        assert_eq!(dilate_circular(&m, 0), m);
    }

    #[test]
    fn bright_slice_has_no_lung() {
        let img = HuImage::filled(32, 32, 40.0);
        assert!(matches!(extract_lung_mask(&img, &MaskParams::default()), Err(Error::NoLungRegion)));
        let (m, fallback) = extract_or_full(&img, &MaskParams::default()).unwrap();
        assert!(fallback);
        assert_eq!(m.count(), 32 * 32);
    }

    #[test]
    fn border_air_is_ignored() {
        // dark frame around a bright body with one dark hole
        let mut img = HuImage::filled(20, 20, -1000.0);
        for r in 3..17 {
            for c in 3..17 {
                img.set(r, c, 40.0);
            }
        }
        for r in 8..11 {
            for c in 8..11 {
                img.set(r, c, -800.0);
            }
        }
        let params = MaskParams {
            dilation_radius: 0,
            ..MaskParams::default()
        };
        let m = extract_lung_mask(&img, &params).unwrap();
        assert_eq!(m.count(), 9);
        assert!(m.get(9, 9) && !m.get(0, 0));
    }

    #[test]
    fn mask_paths_and_io() {
        assert_eq!(mask_path_for(Path::new("a/slice_003.pgm")), PathBuf::from("a/slice_003.mask.pgm"));
        let dir = tempfile::tempdir().unwrap();
        let mut m = BinaryMask::empty(3, 2);
        m.set(1, 2, true);
        let p = dir.path().join("x.mask.pgm");
        write_mask(&p, &m, &[]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 0, 0, 255]);
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn radius_scales_with_resolution() {
        assert_eq!(MaskParams::for_size(64, 64).dilation_radius, 2);
        assert_eq!(MaskParams::for_size(512, 512).dilation_radius, 16);
        assert_eq!(MaskParams::for_size(16, 16).dilation_radius, 1);
    }

    fn random_mask() -> impl Strategy<Value = BinaryMask> {
        (3usize..20, 3usize..20).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop::bool::weighted(0.1), w * h).prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilation_is_extensive_and_monotone(m in random_mask(), r in 0usize..5) {
            let a = dilate_circular(&m, r);
            let b = dilate_circular(&m, r + 1);
            prop_assert!(m.is_subset_of(&a));
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn grown_region_contains_seed_and_is_stable(vals in prop::collection::vec(prop::sample::select(vec![-900.0f32, 0.0]), 100), sr in 0usize..10, sc in 0usize..10) {
            let img = HuImage::new(10, 10, vals).unwrap();
            let m = region_grow(&img, (sr, sc), 100.0, Connectivity::Four).unwrap();
            prop_assert!(m.get(sr, sc));
            // regrowing from any member of a constant-valued region reproduces it
            let v = img.get(sr, sc);
            let constant_nbhd = (sr.saturating_sub(1)..=(sr + 1).min(9))
                .all(|r| (sc.saturating_sub(1)..=(sc + 1).min(9)).all(|c| img.get(r, c) == v));
            if constant_nbhd {
                let again = region_grow(&img, (sr, sc), 100.0, Connectivity::Four).unwrap();
                prop_assert_eq!(&again, &m);
                let comps = connected_components(&m, Connectivity::Four, 0);
                prop_assert_eq!(comps.len(), 1);
            }
        }
    }
}
