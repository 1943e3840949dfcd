use rand::Rng as _;

use super::spec::Activation;
use super::tensor::{gemm_strided, matmul, Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub(crate) struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    fn zeros(n: usize) -> Self {
        Self::new(vec![T::zero(); n])
    }
}

fn glorot<T: Real>(n: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-limit..=limit))).collect()
}

fn no_cache(layer: &str) -> Error {
    Error::Shape(format!("{layer}: backward without a train-mode forward pass"))
}

#[derive(Debug, Clone)]
pub(crate) struct Conv<T> {
    in_maps: usize,
    out_maps: usize,
    kernel: [usize; 2],
    stride: [usize; 2],
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    /// The first layer never needs the gradient of its input.
    need_dx: bool,
    input: Option<Tensor4<T>>,
    cols: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn new(
        in_maps: usize,
        out_maps: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        bias: bool,
        need_dx: bool,
        rng: &mut Rng,
    ) -> Self {
        let k = in_maps * kernel[0] * kernel[1];
        let fan_out = out_maps * kernel[0] * kernel[1];
        Self {
            in_maps,
            out_maps,
            kernel,
            stride,
            weight: Param::new(glorot(out_maps * k, k, fan_out, rng)),
            bias: bias.then(|| Param::zeros(out_maps)),
            need_dx,
            input: None,
            cols: Vec::new(),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = super::spec::output_len(h, self.kernel[0], self.stride[0]);
        let ow = super::spec::output_len(w, self.kernel[1], self.stride[1]);
        match (oh, ow) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Shape(format!("conv kernel {:?} does not fit {h}x{w}", self.kernel))),
        }
    }

    /// A single-map input with a one-row kernel: each output row is a GEMM
    /// against a Hankel view of one input row, with no im2col copy.
    fn hankel(&self) -> bool {
        self.in_maps == 1 && self.kernel[0] == 1
    }

    /// Writes the columns of one sample into `cols` (row stride `ld`)
    /// starting at column `off`.
    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [T], ld: usize, off: usize) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        for ci in 0..self.in_maps {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    let dst = &mut cols[row * ld + off..];
                    for oy in 0..oh {
                        let src = &x[(ci * h + oy * sh + i) * w..];
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        if sw == 1 {
                            d.copy_from_slice(&src[j..j + ow]);
                        } else {
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[ox * sw + j];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, dcols: &[T], ld: usize, off: usize, dx: &mut [T], h: usize, w: usize, oh: usize, ow: usize) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let p = oh * ow;
        for ci in 0..self.in_maps {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    let src = &dcols[row * ld + off..row * ld + off + p];
                    for oy in 0..oh {
                        let base = (ci * h + oy * sh + i) * w + j;
                        for ox in 0..ow {
                            dx[base + ox * sw] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }

    /// All samples' columns side by side: K x (batch * P).
    fn batch_cols(&mut self, x: &Tensor4<T>, oh: usize, ow: usize) -> usize {
        let [b, _, h, w] = x.dims();
        let p = oh * ow;
        let k = self.in_maps * self.kernel[0] * self.kernel[1];
        let ld = b * p;
        let mut cols = std::mem::take(&mut self.cols);
        cols.resize(k * ld, T::zero());
        for s in 0..b {
            self.im2col(x.sample(s), h, w, oh, ow, &mut cols, ld, s * p);
        }
        self.cols = cols;
        ld
    }

    pub fn forward(&mut self, x: Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let [b, c, h, w] = x.dims();
        if c != self.in_maps {
            return Err(Error::Shape(format!("conv expects {} input maps, got {c}", self.in_maps)));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let p = oh * ow;
        let k = self.in_maps * self.kernel[0] * self.kernel[1];
        let (kw, sh, sw) = (self.kernel[1], self.stride[0], self.stride[1]);
        let mut out = Tensor4::zeros([b, self.out_maps, oh, ow]);
        if self.hankel() {
            for s in 0..b {
                let xs = x.sample(s);
                let ys = out.sample_mut(s);
                for oy in 0..oh {
                    let row = &xs[oy * sh * w..];
                    gemm_strided(self.out_maps, kw, ow, &self.weight.value, (kw, 1), row, (1, sw), T::zero(), &mut ys[oy * ow..], (p, 1));
                }
            }
        } else {
            let ld = self.batch_cols(&x, oh, ow);
            let mut big = vec![T::zero(); self.out_maps * ld];
            matmul(false, false, self.out_maps, ld, k, &self.weight.value, &self.cols, T::zero(), &mut big);
            for s in 0..b {
                let ys = out.sample_mut(s);
                for m in 0..self.out_maps {
                    ys[m * p..(m + 1) * p].copy_from_slice(&big[m * ld + s * p..m * ld + (s + 1) * p]);
                }
            }
        }
        if let Some(bias) = &self.bias {
            for s in 0..b {
                for (m, chunk) in out.sample_mut(s).chunks_exact_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias.value[m]);
                }
            }
        }
        self.input = train.then_some(x);
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor4<T>) -> Result<Option<Tensor4<T>>> {
        let x = self.input.take().ok_or_else(|| no_cache("conv"))?;
        let [b, _, h, w] = x.dims();
        let [_, _, oh, ow] = dy.dims();
        let p = oh * ow;
        let ld = b * p;
        let k = self.in_maps * self.kernel[0] * self.kernel[1];
        let (kw, sh, sw) = (self.kernel[1], self.stride[0], self.stride[1]);
        let hankel = self.hankel();
        // dY gathered to out x (batch * P), matching the column layout.
        let big = if !hankel || self.bias.is_some() || self.need_dx {
            let mut big = vec![T::zero(); self.out_maps * ld];
            for s in 0..b {
                let g = dy.sample(s);
                for m in 0..self.out_maps {
                    big[m * ld + s * p..m * ld + (s + 1) * p].copy_from_slice(&g[m * p..(m + 1) * p]);
                }
            }
            big
        } else {
            Vec::new()
        };
        if hankel {
            for s in 0..b {
                let xs = x.sample(s);
                let g = dy.sample(s);
                for oy in 0..oh {
                    let row = &xs[oy * sh * w..];
                    gemm_strided(self.out_maps, ow, kw, &g[oy * ow..], (p, 1), row, (sw, 1), T::one(), &mut self.weight.grad, (kw, 1));
                }
            }
        } else {
            self.batch_cols(&x, oh, ow);
            matmul(false, true, self.out_maps, k, ld, &big, &self.cols, T::one(), &mut self.weight.grad);
        }
        if let Some(bias) = &mut self.bias {
            for m in 0..self.out_maps {
                bias.grad[m] += big[m * ld..(m + 1) * ld].iter().copied().sum();
            }
        }
        if !self.need_dx {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); k * ld];
        matmul(true, false, k, ld, self.out_maps, &self.weight.value, &big, T::zero(), &mut dcols);
        let mut dx = Tensor4::zeros(x.dims());
        for s in 0..b {
            self.col2im(&dcols, ld, s * p, dx.sample_mut(s), h, w, oh, ow);
        }
        Ok(Some(dx))
    }
}

/// Per-map batch normalization over (batch, height, width).
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<T> {
    maps: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    xhat: Option<(Tensor4<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(maps: usize) -> Self {
        Self {
            maps,
            gamma: Param::new(vec![T::one(); maps]),
            beta: Param::zeros(maps),
            running_mean: vec![0.0; maps],
            running_var: vec![1.0; maps],
            xhat: None,
        }
    }

    pub fn forward(&mut self, mut x: Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let [b, c, h, w] = x.dims();
        if c != self.maps {
            return Err(Error::Shape(format!("batch norm over {} maps, got {c}", self.maps)));
        }
        let hw = h * w;
        let n = (b * hw) as f64;
        let data = x.data_mut();
        if !train {
            for m in 0..c {
                let inv = 1.0 / (self.running_var[m] + BN_EPS).sqrt();
                let scale = T::of(inv) * self.gamma.value[m];
                let shift = self.beta.value[m] - T::of(self.running_mean[m]) * scale;
                for s in 0..b {
                    let off = (s * c + m) * hw;
                    data[off..off + hw].iter_mut().for_each(|v| *v = *v * scale + shift);
                }
            }
            self.xhat = None;
            return Ok(x);
        }
        let mut inv_std = Vec::with_capacity(c);
        for m in 0..c {
            let mut sum = 0.0;
            for s in 0..b {
                let off = (s * c + m) * hw;
                sum += data[off..off + hw].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for s in 0..b {
                let off = (s * c + m) * hw;
                ss += data[off..off + hw].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
            }
            let var = ss / n;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            let (mt, it) = (T::of(mean), T::of(inv));
            for s in 0..b {
                let off = (s * c + m) * hw;
                data[off..off + hw].iter_mut().for_each(|v| *v = (*v - mt) * it);
            }
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[m] = (1.0 - BN_MOMENTUM) * self.running_mean[m] + BN_MOMENTUM * mean;
            self.running_var[m] = (1.0 - BN_MOMENTUM) * self.running_var[m] + BN_MOMENTUM * unbiased;
            inv_std.push(it);
        }
        let xhat = x.clone();
        let data = x.data_mut();
        for m in 0..c {
            let (g, be) = (self.gamma.value[m], self.beta.value[m]);
            for s in 0..b {
                let off = (s * c + m) * hw;
                data[off..off + hw].iter_mut().for_each(|v| *v = *v * g + be);
            }
        }
        self.xhat = Some((xhat, inv_std));
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor4<T>) -> Result<Tensor4<T>> {
        let (xhat, inv_std) = self.xhat.take().ok_or_else(|| no_cache("batch norm"))?;
        let [b, c, h, w] = dy.dims();
        let hw = h * w;
        let n = T::of((b * hw) as f64);
        let xh = xhat.data();
        let g = dy.data_mut();
        for m in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..b {
                let off = (s * c + m) * hw;
                for i in off..off + hw {
                    sum_dy += g[i];
                    sum_dy_xhat += g[i] * xh[i];
                }
            }
            self.gamma.grad[m] += sum_dy_xhat;
            self.beta.grad[m] += sum_dy;
            let k = self.gamma.value[m] * inv_std[m] / n;
            for s in 0..b {
                let off = (s * c + m) * hw;
                for i in off..off + hw {
                    g[i] = k * (n * g[i] - sum_dy - xh[i] * sum_dy_xhat);
                }
            }
        }
        Ok(dy)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Act<T> {
    function: Activation,
    output: Option<Tensor4<T>>,
}

impl<T: Real> Act<T> {
    pub fn new(function: Activation) -> Self {
        Self { function, output: None }
    }

    pub fn forward(&mut self, mut x: Tensor4<T>, train: bool) -> Tensor4<T> {
        match self.function {
            Activation::Elu => x.data_mut().iter_mut().for_each(|v| {
                if *v <= T::zero() {
                    *v = v.exp() - T::one();
                }
            }),
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
        }
        self.output = train.then(|| x.clone());
        x
    }

    /// Which inputs of the last train-mode forward pass were positive.
    pub fn positive(&self) -> impl Iterator<Item = bool> + '_ {
        self.output.iter().flat_map(|y| y.data().iter().map(|&v| v > T::zero()))
    }

    pub fn backward(&mut self, mut dy: Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.output.take().ok_or_else(|| no_cache("activation"))?;
        // y > 0 exactly where the input was positive.
        let (one, zero) = (T::one(), T::zero());
        match self.function {
            Activation::Elu => {
                for (g, &y) in dy.data_mut().iter_mut().zip(y.data()) {
                    *g *= if y > zero { one } else { y + one };
                }
            }
            Activation::Relu => {
                for (g, &y) in dy.data_mut().iter_mut().zip(y.data()) {
                    *g *= if y > zero { one } else { zero };
                }
            }
        }
        Ok(dy)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training.
#[derive(Debug, Clone)]
pub(crate) struct Dropout<T> {
    rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, mut x: Tensor4<T>, rng: Option<&mut Rng>) -> Tensor4<T> {
        self.mask = None;
        let Some(rng) = rng else { return x };
        if self.rate == 0.0 {
            self.mask = Some(Vec::new());
            return x;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let threshold = (self.rate * 4_294_967_296.0) as u64;
        let mut bits = vec![0u32; x.len()];
        rng.fill(&mut bits[..]);
        let mask: Vec<T> = bits
            .iter()
            .map(|&r| if u64::from(r) < threshold { T::zero() } else { keep })
            .collect();
        x.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Tensor4<T>) -> Result<Tensor4<T>> {
        let mask = self.mask.take().ok_or_else(|| no_cache("dropout"))?;
        if !mask.is_empty() {
            dy.data_mut().iter_mut().zip(&mask).for_each(|(g, &m)| *g *= m);
        }
        Ok(dy)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AvgPool {
    kernel: [usize; 2],
    stride: [usize; 2],
    input_dims: Option<[usize; 4]>,
}

impl AvgPool {
    pub fn new(kernel: [usize; 2], stride: [usize; 2]) -> Self {
        Self { kernel, stride, input_dims: None }
    }

    pub fn forward<T: Real>(&mut self, x: Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let [b, c, h, w] = x.dims();
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let (oh, ow) = match (
            super::spec::output_len(h, kh, sh),
            super::spec::output_len(w, kw, sw),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Shape(format!("pool kernel {:?} does not fit {h}x{w}", self.kernel))),
        };
        let scale = T::of(1.0 / (kh * kw) as f64);
        let mut out = Tensor4::zeros([b, c, oh, ow]);
        let (xd, od) = (x.data(), out.data_mut());
        for bc in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for i in 0..kh {
                        let row = (bc * h + oy * sh + i) * w + ox * sw;
                        acc += xd[row..row + kw].iter().copied().sum::<T>();
                    }
                    od[(bc * oh + oy) * ow + ox] = acc * scale;
                }
            }
        }
        self.input_dims = train.then_some([b, c, h, w]);
        Ok(out)
    }

    pub fn backward<T: Real>(&mut self, dy: Tensor4<T>) -> Result<Tensor4<T>> {
        let dims = self.input_dims.take().ok_or_else(|| no_cache("pool"))?;
        let [b, c, h, w] = dims;
        let [_, _, oh, ow] = dy.dims();
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let scale = T::of(1.0 / (kh * kw) as f64);
        let mut dx = Tensor4::zeros(dims);
        let (g, d) = (dy.data(), dx.data_mut());
        for bc in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[(bc * oh + oy) * ow + ox] * scale;
                    for i in 0..kh {
                        let row = (bc * h + oy * sh + i) * w + ox * sw;
                        d[row..row + kw].iter_mut().for_each(|x| *x += v);
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense<T> {
    inputs: usize,
    units: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        Self {
            inputs,
            units,
            weight: Param::new(glorot(units * inputs, inputs, units, rng)),
            bias: Param::zeros(units),
            input: None,
        }
    }

    pub fn reinit(&mut self, rng: &mut Rng) {
        self.weight.value = glorot(self.units * self.inputs, self.inputs, self.units, rng);
    }

    pub fn forward(&mut self, x: Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let [b, c, h, w] = x.dims();
        if c * h * w != self.inputs {
            return Err(Error::Shape(format!("dense expects {} inputs, got {}", self.inputs, c * h * w)));
        }
        let mut out = Tensor4::zeros([b, self.units, 1, 1]);
        matmul(false, true, b, self.units, self.inputs, x.data(), &self.weight.value, T::zero(), out.data_mut());
        for row in out.data_mut().chunks_exact_mut(self.units) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, &bv)| *v += bv);
        }
        self.input = train.then_some(x);
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.take().ok_or_else(|| no_cache("dense"))?;
        let b = dy.dims()[0];
        matmul(true, false, self.units, self.inputs, b, dy.data(), x.data(), T::one(), &mut self.weight.grad);
        for row in dy.data().chunks_exact(self.units) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
        }
        let mut dx = Tensor4::zeros(x.dims());
        matmul(false, false, b, self.inputs, self.units, dy.data(), &self.weight.value, T::zero(), dx.data_mut());
        Ok(dx)
    }
}
