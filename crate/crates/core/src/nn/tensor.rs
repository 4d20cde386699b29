use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type of a computation (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    const NAME: &'static str;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// `[1, n]` row vector.
    pub fn row(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `[m, k] x [k, n]` into a fresh buffer.
pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Geometry of a 2-D convolution over a `[C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Rows of `c_in * k * k` patch values, one column per output pixel;
    /// padding reads as zero.
    fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = oh * ow;
        let k = self.k;
        let mut cols = vec![T::zero(); self.c_in * k * k * plane];
        self.for_each_patch_row(|row, ci, iy_of, ix_of| {
            let dst = &mut cols[row * plane..(row + 1) * plane];
            for oy in 0..oh {
                let Some(iy) = iy_of(oy) else { continue };
                let src = &input[(ci * self.h + iy) * self.w..];
                for ox in 0..ow {
                    if let Some(ix) = ix_of(ox) {
                        dst[oy * ow + ox] = src[ix];
                    }
                }
            }
        });
        cols
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters patch rows back onto the
    /// input grid, summing overlaps.
    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = oh * ow;
        let mut out = vec![T::zero(); self.c_in * self.h * self.w];
        self.for_each_patch_row(|row, ci, iy_of, ix_of| {
            let src = &cols[row * plane..(row + 1) * plane];
            for oy in 0..oh {
                let Some(iy) = iy_of(oy) else { continue };
                let base = (ci * self.h + iy) * self.w;
                for ox in 0..ow {
                    if let Some(ix) = ix_of(ox) {
                        out[base + ix] += src[oy * ow + ox];
                    }
                }
            }
        });
        out
    }

    /// Calls `f(row, ci, iy_of, ix_of)` for every `(ci, ky, kx)` patch row,
    /// with maps from output to input coordinates (`None` inside padding).
    fn for_each_patch_row(
        &self,
        mut f: impl FnMut(usize, usize, &dyn Fn(usize) -> Option<usize>, &dyn Fn(usize) -> Option<usize>),
    ) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let (h, w) = (self.h as isize, self.w as isize);
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let iy_of = |oy: usize| {
                        let iy = oy as isize * s + ky as isize - p;
                        (0..h).contains(&iy).then_some(iy as usize)
                    };
                    let ix_of = |ox: usize| {
                        let ix = ox as isize * s + kx as isize - p;
                        (0..w).contains(&ix).then_some(ix as usize)
                    };
                    f(row, ci, &iy_of, &ix_of);
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.out_h() * g.out_w();
    let patch = g.c_in * g.k * g.k;
    let cols = g.im2col(input);
    let mut out = matmul_raw(weight, &cols, g.c_out, patch, plane);
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            out[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    d_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.out_h() * g.out_w();
    let patch = g.c_in * g.k * g.k;
    let cols = g.im2col(input);
    let d_w = matmul_raw(d_out, &transpose_raw(&cols, patch, plane), g.c_out, plane, patch);
    let d_cols = matmul_raw(&transpose_raw(weight, g.c_out, patch), d_out, patch, g.c_out, plane);
    let d_in = g.col2im(&d_cols);
    let d_b = (0..g.c_out)
        .map(|co| d_out[co * plane..(co + 1) * plane].iter().copied().sum())
        .collect();
    (d_in, d_w, d_b)
}

/// Euclidean projection of `z` onto the probability simplex.
pub fn sparsemax<T: Real>(z: &[T]) -> Vec<T> {
    let mut sorted: Vec<T> = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut support = 0usize;
    let mut support_sum = T::zero();
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = T::of((j + 1) as f64);
        if T::one() + k * v > cumsum {
            support = j + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - T::one()) / T::of(support as f64);
    z.iter().map(|&v| (v - tau).max(T::zero())).collect()
}
