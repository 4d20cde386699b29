//! Grayscale rasters and the binary PGM (P5) codec.
//!
//! CT slices live on disk as 16-bit PGM holding `HU + 1024` (big-endian
//! samples, clamped to `[0, 65535]`); masks are 8-bit PGM with 0/255 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const HU_OFFSET: f32 = 1024.0;

/// Row-major raster of Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct HuImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl HuImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("empty raster".into()));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} raster needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(HuImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        HuImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// Maps the lung window `[lo, hi]` HU linearly onto `[0, 1]`.
    pub fn window(&self, lo: f32, hi: f32) -> Vec<f32> {
        self.data
            .iter()
            .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn to_stored(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&v| (v + HU_OFFSET).round().clamp(0.0, 65535.0) as u16)
            .collect()
    }

    pub fn from_stored(width: usize, height: usize, stored: &[u16]) -> Result<Self> {
        let data = stored.iter().map(|&v| f32::from(v) - HU_OFFSET).collect();
        HuImage::new(width, height, data)
    }
}

/// Area-averaging resize of a row-major `f32` plane. Exact box filter: each
/// output pixel is the overlap-weighted mean of the source pixels it covers.
pub fn resize_area(src: &[f32], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    if width == out_w && height == out_h {
        return src.to_vec();
    }
    let weights = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f32)>> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let start = o as f64 * scale;
                let end = start + scale;
                let mut w = Vec::new();
                let mut i = start.floor() as usize;
                while (i as f64) < end && i < n_in {
                    let lo = start.max(i as f64);
                    let hi = end.min(i as f64 + 1.0);
                    if hi > lo {
                        w.push((i, ((hi - lo) / scale) as f32));
                    }
                    i += 1;
                }
                w
            })
            .collect()
    };
    let wx = weights(width, out_w);
    let wy = weights(height, out_h);
    let mut out = vec![0.0f32; out_w * out_h];
    for (oy, ry) in wy.iter().enumerate() {
        for (ox, rx) in wx.iter().enumerate() {
            let mut acc = 0.0f32;
            for &(iy, fy) in ry {
                for &(ix, fx) in rx {
                    acc += src[iy * width + ix] * fy * fx;
                }
            }
            out[oy * out_w + ox] = acc;
        }
    }
    out
}

/// Decoded PGM contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
    pub comments: Vec<String>,
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize, comments: &mut Vec<String>) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            let start = *pos + 1;
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            comments.push(String::from_utf8_lossy(&bytes[start..*pos]).trim().to_string());
        } else {
            return;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, comments: &mut Vec<String>) -> Option<usize> {
    skip_ws_and_comments(bytes, pos, comments);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut pos = 2;
    let mut comments = Vec::new();
    let width = header_number(bytes, &mut pos, &mut comments).ok_or("bad width")?;
    let height = header_number(bytes, &mut pos, &mut comments).ok_or("bad height")?;
    let maxval = header_number(bytes, &mut pos, &mut comments).ok_or("bad maxval")?;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("truncated header".into());
    }
    pos += 1;
    let n = width * height;
    let body = &bytes[pos..];
    let samples = if maxval < 256 {
        if body.len() < n {
            return Err(format!("expected {n} bytes of raster, found {}", body.len()));
        }
        body[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if body.len() < 2 * n {
            return Err(format!("expected {} bytes of raster, found {}", 2 * n, body.len()));
        }
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
        comments,
    })
}

pub fn encode_pgm(width: usize, height: usize, maxval: u16, samples: &[u16], comments: &[String]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + samples.len() * 2);
    out.extend_from_slice(b"P5\n");
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    let _ = write!(out, "{width} {height}\n{maxval}\n");
    if maxval < 256 {
        out.extend(samples.iter().map(|&s| s.min(255) as u8));
    } else {
        for &s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, samples: &[u16], comments: &[String]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, maxval, samples, comments)).map_err(|e| Error::io(path, e))
}

pub fn read_hu_slice(path: &Path) -> Result<HuImage> {
    let pgm = read_pgm(path)?;
    HuImage::from_stored(pgm.width, pgm.height, &pgm.samples)
}

pub fn write_hu_slice(path: &Path, image: &HuImage, comments: &[String]) -> Result<()> {
    write_pgm(path, image.width, image.height, 65535, &image.to_stored(), comments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixteen_bit_is_big_endian() {
        let bytes = encode_pgm(2, 1, 65535, &[0x0102, 0xA0B0], &[]);
        assert_eq!(&bytes[..], b"P5\n2 1\n65535\n\x01\x02\xA0\xB0");
    }

    #[test]
    fn comments_are_skipped_and_kept() {
        let bytes = b"P5\n# hello\n2 # mid\n2\n255\n\x00\x01\x02\xff";
        let pgm = decode_pgm(bytes).unwrap();
        assert_eq!((pgm.width, pgm.height, pgm.maxval), (2, 2, 255));
        assert_eq!(pgm.samples, vec![0, 1, 2, 255]);
        assert_eq!(pgm.comments, vec!["hello".to_string(), "mid".to_string()]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n0 2\n255\n").is_err());
    }

    #[test]
    fn hu_storage_clamps() {
        let img = HuImage::new(3, 1, vec![-2000.0, 0.0, 70000.0]).unwrap();
        assert_eq!(img.to_stored(), vec![0, 1024, 65535]);
    }

    #[test]
    fn area_resize_preserves_mean() {
        let src: Vec<f32> = (0..64).map(|v| v as f32).collect();
        let out = resize_area(&src, 8, 8, 4, 4);
        assert_eq!(out.len(), 16);
        let m_in: f32 = src.iter().sum::<f32>() / 64.0;
        let m_out: f32 = out.iter().sum::<f32>() / 16.0;
        assert!((m_in - m_out).abs() < 1e-4);
        assert_eq!(out[0], (0.0 + 1.0 + 8.0 + 9.0) / 4.0);
    }

    proptest! {
        #[test]
        fn pgm_roundtrip(w in 1usize..20, h in 1usize..20, wide in any::<bool>(), seed in any::<u64>()) {
            let maxval = if wide { 65535 } else { 255 };
            let samples: Vec<u16> = (0..w * h)
                .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 17) % (u64::from(maxval) + 1)) as u16)
                .collect();
            let bytes = encode_pgm(w, h, maxval, &samples, &["run {\"seed\":1}".to_string()]);
            let pgm = decode_pgm(&bytes).unwrap();
            prop_assert_eq!(pgm.samples, samples);
            prop_assert_eq!((pgm.width, pgm.height), (w, h));
        }
    }
}
