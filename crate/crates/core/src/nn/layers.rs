//! Layers with hand-written forward and backward passes.
//!
//! Training-mode forwards keep what their backward pass needs; `backward`
//! consumes that cache, so calling it twice (or before a forward) is a
//! [`Error::StateError`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// A trainable parameter with its gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub velocity: Vec<T>,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>, decay: bool) -> Self {
        let n = value.len();
        Param {
            value,
            grad: vec![T::zero(); n],
            velocity: vec![T::zero(); n],
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// A mutable view of one stored array, in declaration order.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    Buffer(&'a mut Vec<T>),
}

fn missing_cache(layer: &str) -> Error {
    Error::StateError(format!("{layer} backward called without a training forward"))
}

/// Bias-free 2-D convolution evaluated as im2col + matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `(out_ch, in_ch, kernel, kernel)`, row-major.
    pub weight: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, weight: Vec<T>) -> Result<Self> {
        if weight.len() != out_ch * in_ch * kernel * kernel {
            return Err(Error::ShapeMismatch(format!(
                "conv {in_ch}->{out_ch} k{kernel} needs {} weights, got {}",
                out_ch * in_ch * kernel * kernel,
                weight.len()
            )));
        }
        if stride == 0 || kernel == 0 {
            return Err(Error::ShapeMismatch("kernel and stride must be positive".into()));
        }
        Ok(Conv2d {
            weight: Param::new(weight, true),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            input: None,
        })
    }

    /// Kaiming-normal initialisation, `std = sqrt(2 / fan_in)`.
    pub fn kaiming<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = (0..out_ch * in_ch * kernel * kernel)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self::new(in_ch, out_ch, kernel, stride, pad, w).expect("weight count matches")
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} input smaller than kernel {} with padding {}",
                self.kernel, self.pad
            )));
        }
        Ok((
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.c() != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.c()
            )));
        }
        self.out_size(x.h(), x.w())
    }

    fn patch_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    /// Unfold one sample into a `(in_ch*k*k) x (ho*wo)` column matrix.
    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = ho * wo;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let row = &mut col[((c * k + u) * k + v) * cols..][..cols];
                    for i in 0..ho {
                        let y = (i * s + u) as isize - p;
                        let dst = &mut row[i * wo..(i + 1) * wo];
                        if y < 0 || y >= h as isize {
                            dst.iter_mut().for_each(|d| *d = T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * w..(y as usize + 1) * w];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let xx = (j * s + v) as isize - p;
                            *d = if xx < 0 || xx >= w as isize { T::zero() } else { src[xx as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Fold a column-matrix gradient back onto one sample (accumulating).
    fn col2im(&self, col: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let cols = ho * wo;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let row = &col[((c * k + u) * k + v) * cols..][..cols];
                    for i in 0..ho {
                        let y = (i * s + u) as isize - p;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                        for (j, &g) in row[i * wo..(i + 1) * wo].iter().enumerate() {
                            let xx = (j * s + v) as isize - p;
                            if xx >= 0 && xx < w as isize {
                                dst[xx as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (ho, wo) = self.check_input(x)?;
        let (h, w) = (x.h(), x.w());
        let mut out = Tensor::zeros([x.n(), self.out_ch, ho, wo]);
        let rows = self.patch_rows();
        let wmat = MatRef::new(&self.weight.value, self.out_ch, rows);
        out.data_mut()
            .par_chunks_mut(self.out_ch * ho * wo)
            .enumerate()
            .for_each(|(i, o)| {
                let mut col = vec![T::zero(); rows * ho * wo];
                self.im2col(x.sample(i), h, w, ho, wo, &mut col);
                gemm(T::one(), wmat, MatRef::new(&col, rows, ho * wo), T::zero(), o);
            });
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward_eval(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Accumulate the weight gradient and return the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv"))?;
        let (ho, wo) = self.out_size(x.h(), x.w())?;
        if dy.shape() != [x.n(), self.out_ch, ho, wo] {
            return Err(Error::ShapeMismatch(format!(
                "conv output gradient {:?}, expected {:?}",
                dy.shape(),
                [x.n(), self.out_ch, ho, wo]
            )));
        }
        let (h, w) = (x.h(), x.w());
        let rows = self.patch_rows();
        let cols = ho * wo;
        let wmat = MatRef::new(&self.weight.value, self.out_ch, rows);
        let mut dx = Tensor::zeros(x.shape());
        let sample_len = x.sample_len();
        let partials: Vec<Vec<T>> = dx
            .data_mut()
            .par_chunks_mut(sample_len)
            .enumerate()
            .map(|(i, dxi)| {
                let mut col = vec![T::zero(); rows * cols];
                self.im2col(x.sample(i), h, w, ho, wo, &mut col);
                let dyi = MatRef::new(dy.sample(i), self.out_ch, cols);
                let mut dw = vec![T::zero(); self.out_ch * rows];
                gemm(T::one(), dyi, MatRef::new(&col, rows, cols).t(), T::zero(), &mut dw);
                gemm(T::one(), wmat.t(), dyi, T::zero(), &mut col);
                self.col2im(&col, h, w, ho, wo, dxi);
                dw
            })
            .collect();
        // fixed summation order keeps results independent of thread count
        for dw in partials {
            for (g, d) in self.weight.grad.iter_mut().zip(dw) {
                *g += d;
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Per-channel batch normalisation over `(N, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<(Tensor<T>, Vec<f64>)>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![T::one(); channels], false),
            beta: Param::new(vec![T::zero(); channels], false),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.c()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Tensor<T>) {
        let (c_n, hw) = (x.c(), x.h() * x.w());
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for (i, ((chunk, xh), yy)) in x
            .data()
            .chunks(hw)
            .zip(xhat.data_mut().chunks_mut(hw))
            .zip(y.data_mut().chunks_mut(hw))
            .enumerate()
        {
            let c = i % c_n;
            let (m, s) = (mean[c], inv_std[c]);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for ((&v, h), o) in chunk.iter().zip(xh.iter_mut()).zip(yy.iter_mut()) {
                *h = T::from_f64((v.as_f64() - m) * s);
                *o = g * *h + b;
            }
        }
        (xhat, y)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mean: Vec<f64> = self.running_mean.iter().map(|v| v.as_f64()).collect();
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v.as_f64() + self.eps).sqrt())
            .collect();
        Ok(self.apply(x, &mean, &inv_std).1)
    }

    /// Normalise with batch statistics and update the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let (c_n, hw) = (x.c(), x.h() * x.w());
        let count = (x.n() * hw) as f64;
        if x.n() * hw < 2 {
            return Err(Error::ShapeMismatch("batch norm needs at least 2 values per channel".into()));
        }
        let mut sum = vec![0.0f64; c_n];
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            sum[i % c_n] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0f64; c_n];
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            let m = mean[i % c_n];
            sq[i % c_n] += chunk.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        let var: Vec<f64> = sq.iter().map(|s| s / count).collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (xhat, y) = self.apply(x, &mean, &inv_std);

        let m = self.momentum;
        for c in 0..c_n {
            let unbiased = var[c] * count / (count - 1.0);
            let rm = &mut self.running_mean[c];
            *rm = T::from_f64((1.0 - m) * rm.as_f64() + m * mean[c]);
            let rv = &mut self.running_var[c];
            *rv = T::from_f64((1.0 - m) * rv.as_f64() + m * unbiased);
        }
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, inv_std) = self.cache.take().ok_or_else(|| missing_cache("batch norm"))?;
        if dy.shape() != xhat.shape() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm gradient {:?}, expected {:?}",
                dy.shape(),
                xhat.shape()
            )));
        }
        let (c_n, hw) = (xhat.c(), xhat.h() * xhat.w());
        let count = (xhat.n() * hw) as f64;
        let mut sum_dy = vec![0.0f64; c_n];
        let mut sum_dy_xhat = vec![0.0f64; c_n];
        for (i, (d, h)) in dy.data().chunks(hw).zip(xhat.data().chunks(hw)).enumerate() {
            let c = i % c_n;
            for (&a, &b) in d.iter().zip(h) {
                sum_dy[c] += a.as_f64();
                sum_dy_xhat[c] += a.as_f64() * b.as_f64();
            }
        }
        for c in 0..c_n {
            self.gamma.grad[c] += T::from_f64(sum_dy_xhat[c]);
            self.beta.grad[c] += T::from_f64(sum_dy[c]);
        }
        let mut dx = Tensor::zeros(xhat.shape());
        for (i, ((d, h), o)) in dy
            .data()
            .chunks(hw)
            .zip(xhat.data().chunks(hw))
            .zip(dx.data_mut().chunks_mut(hw))
            .enumerate()
        {
            let c = i % c_n;
            let scale = self.gamma.value[c].as_f64() * inv_std[c] / count;
            let (sd, sdx) = (sum_dy[c], sum_dy_xhat[c]);
            for ((&a, &b), o) in d.iter().zip(h).zip(o.iter_mut()) {
                *o = T::from_f64(scale * (count * a.as_f64() - sd - b.as_f64() * sdx));
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Fully connected layer on `(N, in, 1, 1)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(out, in)`, row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != in_features * out_features || bias.len() != out_features {
            return Err(Error::ShapeMismatch(format!(
                "linear {in_features}->{out_features} got {} weights, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear {
            weight: Param::new(weight, true),
            bias: Param::new(bias, true),
            in_features,
            out_features,
            input: None,
        })
    }

    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialisation of weights and biases.
    pub fn uniform<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
        };
        let w = draw(in_features * out_features);
        let b = draw(out_features);
        Self::new(in_features, out_features, w, b).expect("sizes match")
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.sample_len() != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.sample_len()
            )));
        }
        let n = x.n();
        let mut data = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            data.extend_from_slice(&self.bias.value);
        }
        gemm(
            T::one(),
            MatRef::new(x.data(), n, self.in_features),
            MatRef::new(&self.weight.value, self.out_features, self.in_features).t(),
            T::one(),
            &mut data,
        );
        Tensor::from_vec([n, self.out_features, 1, 1], data)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward_eval(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let n = x.n();
        if dy.shape() != [n, self.out_features, 1, 1] {
            return Err(Error::ShapeMismatch(format!("linear gradient {:?}", dy.shape())));
        }
        let dym = MatRef::new(dy.data(), n, self.out_features);
        gemm(
            T::one(),
            dym.t(),
            MatRef::new(x.data(), n, self.in_features),
            T::one(),
            &mut self.weight.grad,
        );
        for row in dy.data().chunks(self.out_features) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); n * self.in_features];
        gemm(
            T::one(),
            dym,
            MatRef::new(&self.weight.value, self.out_features, self.in_features),
            T::zero(),
            &mut dx,
        );
        Tensor::from_vec(x.shape(), dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut Tensor<T>, out: &Tensor<T>) {
    for (d, &o) in dy.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Mean over each channel plane: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let hw = x.h() * x.w();
    let inv = T::from_f64(1.0 / hw as f64);
    let data = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([x.n(), x.c(), 1, 1], data).expect("one value per plane")
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Tensor<T>, input_shape: [usize; 4]) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::from_f64(1.0 / hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    dx
}
