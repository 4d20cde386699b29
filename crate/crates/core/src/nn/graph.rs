//! Tape-based reverse-mode differentiation over dense arrays.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns gradients for every parameter the output depends on.

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{self, ConvGeom, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[r, c] + [1, c]` broadcast over rows.
    AddRow(Var, Var),
    /// `[r, c] * [1, c]` broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    SoftmaxRows(Var),
    SparsemaxRows(Var),
    /// Row-wise normalization without affine terms; keeps `1/std` per row.
    NormalizeRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    /// `[C, H, W]` -> `[1, C]`.
    GlobalAvgPool(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let rv = self.value(row);
        if rv.numel() != c {
            return Err(Error::Shape(format!("row broadcast: {c} columns vs {:?}", rv.shape())));
        }
        let rd = rv.data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(rd) {
                if mul {
                    *o *= b;
                } else {
                    *o += b;
                }
            }
        }
        let out = Tensor::new(&[r, c], out)?;
        let op = if mul { Op::MulRow(x, row) } else { Op::AddRow(x, row) };
        Ok(self.push(out, op))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, false)
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, true)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kt = T::of(k);
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a * kt).collect()).expect("same shape");
        self.push(out, Op::Scale(x, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: [{m}, {k}] x [{k2}, {n}]")));
        }
        let out = tensor::matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    /// `x W + b` for `x: [r, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let out = tensor::transpose_raw(self.value(x).data(), r, c);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// 2-D convolution of a `[C_in, H, W]` input with `[C_out, C_in, K, K]`
    /// weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, w) = match self.value(input).shape()[..] {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::Shape(format!("conv2d input must be [C, H, W], got {s:?}"))),
        };
        let (c_out, k) = match self.value(weight).shape()[..] {
            [co, ci, k1, k2] if ci == c_in && k1 == k2 => (co, k1),
            ref s => {
                return Err(Error::Shape(format!(
                    "conv2d weight {s:?} incompatible with {c_in} input channels"
                )))
            }
        };
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!("conv2d: kernel {k} does not fit {h}x{w} with pad {pad}")));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(Error::Shape(format!("conv2d bias needs {c_out} values")));
            }
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            h,
            w,
            k,
            stride,
            pad,
        };
        let out = tensor::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&[c_out, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| f(a)).collect()).expect("same shape");
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(T::zero()), Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a3) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        self.unary(x, |v| half * v * (T::one() + (c * (v + a3 * v * v * v)).tanh()), Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        Ok(self.push(Tensor::new(&[r, c], out)?, Op::SoftmaxRows(x)))
    }

    pub fn sparsemax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let out: Vec<T> = self.value(x).data().chunks(c).flat_map(tensor::sparsemax).collect();
        Ok(self.push(Tensor::new(&[r, c], out)?, Op::SparsemaxRows(x)))
    }

    /// `(x - mean) / sqrt(var + eps)` per row.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        let n = T::of(c as f64);
        for row in out.chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is.as_f64());
        }
        Ok(self.push(Tensor::new(&[r, c], out)?, Op::NormalizeRows { x, inv_std }))
    }

    /// Layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let n = self.normalize_rows(x, 1e-5)?;
        let g = self.param(gain);
        let b = self.param(bias);
        let y = self.mul_row(n, g)?;
        self.add_row(y, b)
    }

    /// `[r, c]` -> `[1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut out = vec![T::zero(); c];
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(r as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Tensor::new(&[1, c], out)?, Op::MeanRows(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, plane) = match self.value(x).shape()[..] {
            [c, h, w] => (c, h * w),
            ref s => return Err(Error::Shape(format!("pool input must be [C, H, W], got {s:?}"))),
        };
        let inv = T::one() / T::of(plane as f64);
        let out = self.value(x).data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Tensor::new(&[1, c], out)?, Op::GlobalAvgPool(x)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > c {
            return Err(Error::Shape(format!("slice_cols {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let out: Vec<T> = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push(Tensor::new(&[r, len], out)?, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(Error::Shape(format!("concat_cols: {pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(&[r, total], out)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "gradient requested for non-scalar output {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|&v| -v).collect());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                    acc(&mut grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
                Op::AddRow(x, row) => {
                    let c = self.value(*row).numel();
                    let mut gr = vec![T::zero(); c];
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *x, g);
                }
                Op::MulRow(x, row) => {
                    let rv = self.value(*row).data();
                    let xv = self.value(*x).data();
                    let c = rv.len();
                    let mut gr = vec![T::zero(); c];
                    let mut gx = g.clone();
                    for (i, chunk) in gx.chunks_mut(c).enumerate() {
                        for j in 0..c {
                            gr[j] += chunk[j] * xv[i * c + j];
                            chunk[j] *= rv[j];
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *x, gx);
                }
                Op::Scale(x, k) => {
                    let k = T::of(*k);
                    acc(&mut grads, *x, g.iter().map(|&v| v * k).collect());
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).dims2()?.1;
                    let bt = tensor::transpose_raw(self.value(*b).data(), k, n);
                    let at = tensor::transpose_raw(self.value(*a).data(), m, k);
                    acc(&mut grads, *a, tensor::matmul_raw(&g, &bt, m, n, k));
                    acc(&mut grads, *b, tensor::matmul_raw(&at, &g, k, m, n));
                }
                Op::Transpose(x) => {
                    let (r, c) = self.value(*x).dims2()?;
                    acc(&mut grads, *x, tensor::transpose_raw(&g, c, r));
                }
                Op::Reshape(x) => acc(&mut grads, *x, g),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let (gi, gw, gb) =
                        tensor::conv2d_backward(geom, self.value(*input).data(), self.value(*weight).data(), &g);
                    if let Some(b) = bias {
                        acc(&mut grads, *b, gb);
                    }
                    acc(&mut grads, *weight, gw);
                    acc(&mut grads, *input, gi);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    acc(
                        &mut grads,
                        *x,
                        g.iter().zip(xv).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect(),
                    );
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    let (c, a3) = (T::of(GELU_C), T::of(GELU_A));
                    let half = T::of(0.5);
                    let three = T::of(3.0);
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(&d, &v)| {
                            let t = (c * (v + a3 * v * v * v)).tanh();
                            let dt = (T::one() - t * t) * c * (T::one() + three * a3 * v * v);
                            d * (half * (T::one() + t) + half * v * dt)
                        })
                        .collect();
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.data();
                    acc(
                        &mut grads,
                        *x,
                        g.iter().zip(yv).map(|(&d, &y)| d * y * (T::one() - y)).collect(),
                    );
                }
                Op::Abs(x) => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, *x, g.iter().zip(xv).map(|(&d, &v)| d * v.signum()).collect());
                }
                Op::SoftmaxRows(x) => {
                    let (_, c) = node.value.dims2()?;
                    let y = node.value.data();
                    let mut gx = vec![T::zero(); y.len()];
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SparsemaxRows(x) => {
                    let (_, c) = node.value.dims2()?;
                    let y = node.value.data();
                    let mut gx = vec![T::zero(); y.len()];
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let support: Vec<usize> = (0..c).filter(|&j| yr[j] > T::zero()).collect();
                        let mean = support.iter().map(|&j| gr[j]).sum::<T>() / T::of(support.len() as f64);
                        for &j in &support {
                            out[j] = gr[j] - mean;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NormalizeRows { x, inv_std } => {
                    let (_, c) = node.value.dims2()?;
                    let y = node.value.data();
                    let n = T::of(c as f64);
                    let mut gx = vec![T::zero(); y.len()];
                    for (i, ((gr, yr), out)) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)).enumerate() {
                        let is = T::of(inv_std[i]);
                        let mean_g = gr.iter().copied().sum::<T>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for j in 0..c {
                            out[j] = is * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (r, _) = self.value(*x).dims2()?;
                    let inv = T::one() / T::of(r as f64);
                    let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                    acc(&mut grads, *x, row.iter().copied().cycle().take(row.len() * r).collect());
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let plane = xv.shape()[1] * xv.shape()[2];
                    let inv = T::one() / T::of(plane as f64);
                    acc(
                        &mut grads,
                        *x,
                        g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, plane)).collect(),
                    );
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.value(*x).dims2()?;
                    let len = node.value.dims2()?.1;
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2()?.1;
                        let gp: Vec<T> = (0..r)
                            .flat_map(|i| g[i * total + offset..i * total + offset + w].iter().copied())
                            .collect();
                        acc(&mut grads, p, gp);
                        offset += w;
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    acc(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    acc(&mut grads, *x, vec![g[0] / T::of(n as f64); n]);
                }
            }
        }

        let mut out = vec![None; self.params.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                    out[pid] = Some(Tensor::new(self.value(*v).shape(), g)?);
                }
            }
        }
        Ok(ParamGrads::from_vec(out))
    }
}

/// Builds a graph with `build`, evaluates its scalar output and returns the
/// output value with gradients for every parameter.
pub fn evaluate_with_gradients<T, F>(params: &ParamStore<T>, build: F) -> Result<(T, ParamGrads<T>)>
where
    T: Real,
    F: FnOnce(&mut Graph<'_, T>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), grads))
}

/// Forward evaluation only.
pub fn evaluate<T, F>(params: &ParamStore<T>, build: F) -> Result<Tensor<T>>
where
    T: Real,
    F: FnOnce(&mut Graph<'_, T>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let out = build(&mut g)?;
    Ok(g.value(out).clone())
}
