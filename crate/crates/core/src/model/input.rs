use crate::dataset::ClinicalVector;
use crate::error::{Error, Result};
use crate::image::{resize_area, HuImage};
use crate::lung_mask::BinaryMask;

/// Lung window applied before scaling intensities to [0, 1].
pub const HU_WINDOW: (f32, f32) = (-1000.0, 400.0);

/// One model input: windowed image, gate mask and clinical vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceInput {
    /// Row-major `size × size`, values in [0, 1].
    pub image: Vec<f32>,
    /// Row-major `size × size`, values in {0, 1}.
    pub mask: Vec<f32>,
    pub clinical: ClinicalVector,
}

impl SliceInput {
    pub fn check(&self, size: usize) -> Result<()> {
        let n = size * size;
        if self.image.len() != n || self.mask.len() != n {
            return Err(Error::Shape(format!(
                "expected {size}x{size} inputs, got image {} and mask {} values",
                self.image.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }
}

/// Windows and resizes a slice; the mask is area-resized and re-binarized at
/// 0.5. `None` means an all-ones mask.
pub fn prepare_slice(slice: &HuImage, mask: Option<&BinaryMask>, clinical: ClinicalVector, size: usize) -> Result<SliceInput> {
    let (w, h) = (slice.width(), slice.height());
    let (lo, hi) = HU_WINDOW;
    let windowed: Vec<f32> = slice.window(lo, hi);
    let image = resize_area(&windowed, w, h, size, size);
    let mask = match mask {
        Some(m) => {
            if (m.width(), m.height()) != (w, h) {
                return Err(Error::Shape(format!(
                    "mask {}x{} does not match slice {w}x{h}",
                    m.width(),
                    m.height()
                )));
            }
            resize_area(&m.to_f32(), w, h, size, size)
                .into_iter()
                .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect()
        }
        None => vec![1.0; size * size],
    };
    Ok(SliceInput { image, mask, clinical })
}
