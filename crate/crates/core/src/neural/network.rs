use ndarray::Array2;
use rand::SeedableRng;

use super::layers::{Act, AvgPool, BatchNorm, Conv, Dense, Dropout, Param};
use super::spec::{LayerSpec, ModelSpec};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches for backward, dropout masks drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, no dropout, no caches.
    Eval,
}

#[derive(Debug, Clone)]
enum Layer<T> {
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    Act(Act<T>),
    Dropout(Dropout<T>),
    Pool(AvgPool),
    Flatten([usize; 4]),
    Dense(Dense<T>),
    Softmax,
}

/// An instantiated [`ModelSpec`] with parameters, gradients and caches.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
    /// Logits and probabilities of the last train-mode forward pass.
    last: Option<(Vec<f64>, Array2<f64>)>,
}

impl<T: Real> Network<T> {
    /// Glorot-uniform weights drawn from the `init` stream of `seed`, except
    /// the output layer, which starts at zero so initial predictions are
    /// uniform.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = SeedStream::new(seed).rng("init", 0);
        let mut prev = [1, spec.n_channels, spec.input_samples];
        let mut first_conv = true;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, &shape) in spec.layers.iter().zip(&shapes) {
            layers.push(match l {
                LayerSpec::Conv { maps_out, kernel, stride, bias } => {
                    let c = Conv::new(prev[0], *maps_out, *kernel, *stride, *bias, !first_conv, &mut rng);
                    first_conv = false;
                    Layer::Conv(c)
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(prev[0])),
                LayerSpec::Activation { function } => Layer::Act(Act::new(*function)),
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(*rate)),
                LayerSpec::AvgPool { kernel, stride } => Layer::Pool(AvgPool::new(*kernel, *stride)),
                LayerSpec::Flatten => Layer::Flatten([0; 4]),
                LayerSpec::Dense { units } => Layer::Dense(Dense::new(prev[0], *units, &mut rng)),
                LayerSpec::Softmax => Layer::Softmax,
            });
            prev = shape;
        }
        let mut net = Self { spec: spec.clone(), layers, last: None };
        net.zero_head();
        Ok(net)
    }

    fn head(&mut self) -> Option<&mut Dense<T>> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Class probabilities, one row per batch element.
    pub fn forward(&mut self, x: Tensor4<T>, mode: Mode) -> Result<Array2<f64>> {
        let [b, c, h, w] = x.dims();
        if c != 1 || h != self.spec.n_channels || w != self.spec.input_samples || b == 0 {
            return Err(Error::Shape(format!(
                "input {:?}, expected (B>0, 1, {}, {})",
                x.dims(),
                self.spec.n_channels,
                self.spec.input_samples
            )));
        }
        let (train, mut rng) = match mode {
            Mode::Train { seed } => (true, Some(Rng::seed_from_u64(seed))),
            Mode::Eval => (false, None),
        };
        let mut x = x;
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(l) => l.forward(x, train)?,
                Layer::BatchNorm(l) => l.forward(x, train)?,
                Layer::Act(l) => l.forward(x, train),
                Layer::Dropout(l) => l.forward(x, rng.as_mut()),
                Layer::Pool(l) => l.forward(x, train)?,
                Layer::Flatten(dims) => {
                    *dims = x.dims();
                    let [b, c, h, w] = x.dims();
                    x.reshape([b, c * h * w, 1, 1])
                }
                Layer::Dense(l) => l.forward(x, train)?,
                Layer::Softmax => x,
            };
        }
        let k = x.dims()[1];
        let logits: Vec<f64> = x.data().iter().map(|v| v.f64()).collect();
        let mut probs = Array2::zeros((b, k));
        for (i, row) in logits.chunks_exact(k).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                probs[[i, j]] = (row[j] - max).exp() / z;
            }
        }
        self.last = train.then(|| (logits, probs.clone()));
        Ok(probs)
    }

    /// Mean cross-entropy of the last train-mode forward pass; accumulates
    /// parameter gradients.
    pub fn backward(&mut self, labels: &[u8]) -> Result<f64> {
        let (logits, probs) = self
            .last
            .take()
            .ok_or_else(|| Error::Shape("backward without a train-mode forward pass".into()))?;
        let (b, k) = probs.dim();
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Range(format!("label {bad} outside 0..{k}")));
        }
        let mut loss = 0.0;
        let mut grad = Tensor4::zeros([b, k, 1, 1]);
        let g = grad.data_mut();
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y as usize];
            for j in 0..k {
                let t = if j == y as usize { 1.0 } else { 0.0 };
                g[i * k + j] = T::of((probs[[i, j]] - t) / b as f64);
            }
        }
        let mut dy = grad;
        for layer in self.layers.iter_mut().rev() {
            dy = match layer {
                Layer::Softmax => dy,
                Layer::Dense(l) => l.backward(dy)?,
                Layer::Flatten(dims) => dy.reshape(*dims),
                Layer::Pool(l) => l.backward(dy)?,
                Layer::Dropout(l) => l.backward(dy)?,
                Layer::Act(l) => l.backward(dy)?,
                Layer::BatchNorm(l) => l.backward(dy)?,
                Layer::Conv(l) => match l.backward(dy)? {
                    Some(dx) => dx,
                    None => break,
                },
            };
        }
        Ok(loss / b as f64)
    }

    /// Sign pattern of every activation input in the last train-mode
    /// forward pass; empty after `backward`.
    pub(crate) fn activation_signs(&self) -> Vec<bool> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Act(a) => Some(a.positive()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => {
                    out.push(&mut l.weight);
                    if let Some(b) = &mut l.bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(l) => {
                    out.push(&mut l.gamma);
                    out.push(&mut l.beta);
                }
                Layer::Dense(l) => {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Trainable parameters flattened in declaration order.
    pub fn parameters(&mut self) -> Vec<T> {
        self.params_mut().into_iter().flat_map(|p| p.value.clone()).collect()
    }

    pub fn gradients(&mut self) -> Vec<T> {
        self.params_mut().into_iter().flat_map(|p| p.grad.clone()).collect()
    }

    pub fn n_parameters(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Sets one trainable parameter by its flat index.
    pub fn set_parameter(&mut self, index: usize, value: T) -> Result<()> {
        let mut i = index;
        for p in self.params_mut() {
            if i < p.value.len() {
                p.value[i] = value;
                return Ok(());
            }
            i -= p.value.len();
        }
        Err(Error::Range(format!("parameter index {index} out of range")))
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_head(&mut self) {
        if let Some(d) = self.head() {
            d.weight.value.iter_mut().for_each(|v| *v = T::zero());
            d.bias.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Re-draws the output layer weights Glorot-uniform from `rng`.
    pub fn randomize_head(&mut self, rng: &mut Rng) {
        if let Some(d) = self.head() {
            d.reinit(rng);
        }
    }

    /// Multiplies every convolution kernel by `factor`.
    pub fn scale_conv_kernels(&mut self, factor: T) {
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                c.weight.value.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Parameters and batch-norm running statistics in declaration order.
    pub fn state(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(l) => {
                    out.extend(l.weight.value.iter().map(|v| v.f64()));
                    if let Some(b) = &l.bias {
                        out.extend(b.value.iter().map(|v| v.f64()));
                    }
                }
                Layer::BatchNorm(l) => {
                    out.extend(l.gamma.value.iter().map(|v| v.f64()));
                    out.extend(l.beta.value.iter().map(|v| v.f64()));
                    out.extend(&l.running_mean);
                    out.extend(&l.running_var);
                }
                Layer::Dense(l) => {
                    out.extend(l.weight.value.iter().map(|v| v.f64()));
                    out.extend(l.bias.value.iter().map(|v| v.f64()));
                }
                _ => {}
            }
        }
        out
    }

    pub fn load_state(&mut self, state: &[f64]) -> Result<()> {
        let expected = self.state().len();
        if state.len() != expected {
            return Err(Error::Corruption(format!("{} state values, model needs {expected}", state.len())));
        }
        let mut it = state.iter().copied();
        let it = &mut it;
        fn fill<T: Real>(it: &mut impl Iterator<Item = f64>, dst: &mut [T]) {
            dst.iter_mut().zip(it).for_each(|(v, s)| *v = T::of(s));
        }
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => {
                    fill(it, &mut l.weight.value);
                    if let Some(b) = &mut l.bias {
                        fill(it, &mut b.value);
                    }
                }
                Layer::BatchNorm(l) => {
                    fill(it, &mut l.gamma.value);
                    fill(it, &mut l.beta.value);
                    l.running_mean.iter_mut().zip(&mut *it).for_each(|(v, s)| *v = s);
                    l.running_var.iter_mut().zip(&mut *it).for_each(|(v, s)| *v = s);
                }
                Layer::Dense(l) => {
                    fill(it, &mut l.weight.value);
                    fill(it, &mut l.bias.value);
                }
                _ => {}
            }
        }
        Ok(())
    }
}
