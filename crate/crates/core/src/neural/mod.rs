//! A small CNN engine written from scratch: im2col convolutions on top of a
//! blocked GEMM, batch norm, dropout, average pooling and a softmax head,
//! trained with Adam on sliding windows.

mod layers;
mod network;
mod spec;
mod tensor;

use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use network::{Mode, Network};
pub use spec::{build_model, build_model_with, output_len, reduced_model, Activation, LayerSpec, ModelSpec, DEFAULT_DROPOUT, INPUT_SAMPLES};
pub use tensor::{Real, Tensor4};

use crate::container;
use crate::csp::argmax;
use crate::eeg::EpochSet;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a training-loss improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 100,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            optimizer: Optimizer::Adam,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Training-window accuracy per epoch, measured on the fly in train mode.
    pub accuracy_curve: Vec<f64>,
    pub stopped_early: bool,
}

/// Cuts every epoch into windows of `win_s` seconds overlapping by
/// `overlap`. Windows keep their trial's label and trial id.
pub fn slide_windows(epochs: &EpochSet, win_s: f64, overlap: f64) -> Result<EpochSet> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Range(format!("overlap {overlap} outside [0, 1)")));
    }
    let fs = f64::from(epochs.fs());
    let win = (win_s * fs).round() as usize;
    let hop = ((win as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n = epochs.n_samples();
    if win == 0 || win > n {
        return Err(Error::Range(format!("window of {win} samples for epochs of {n}")));
    }
    let starts: Vec<usize> = (0..=n - win).step_by(hop).collect();
    let total = epochs.n_trials() * starts.len();
    let mut data = Array3::zeros((total, epochs.n_channels(), win));
    let mut labels = Vec::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    let mut k = 0;
    for t in 0..epochs.n_trials() {
        for &s0 in &starts {
            data.slice_mut(s![k, .., ..]).assign(&epochs.data().slice(s![t, .., s0..s0 + win]));
            labels.push(epochs.labels()[t]);
            ids.push(epochs.trial_ids()[t]);
            k += 1;
        }
    }
    let t0 = epochs.t0_ms();
    EpochSet::with_trial_ids(epochs.montage().clone(), epochs.fs(), t0, labels, ids, data)
}

/// Mean of the window probability vectors, then argmax (ties to the lowest
/// class id).
pub fn predict_trial(window_probs: &[Vec<f64>]) -> usize {
    let k = window_probs.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = vec![0.0; k];
    for p in window_probs {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    argmax(&mean)
}

fn batch_tensor<T: Real>(windows: &EpochSet, idx: &[usize]) -> Tensor4<T> {
    let (c, w) = (windows.n_channels(), windows.n_samples());
    let mut data = Vec::with_capacity(idx.len() * c * w);
    for &i in idx {
        data.extend(windows.trial(i).iter().map(|&v| T::of(f64::from(v))));
    }
    Tensor4::from_vec([idx.len(), 1, c, w], data).expect("batch dims match the window set")
}

impl<T: Real> Network<T> {
    /// Eval-mode probabilities for every window, in batches of `batch`.
    pub fn predict_proba(&mut self, windows: &EpochSet, batch: usize) -> Result<Array2<f64>> {
        let n = windows.n_trials();
        let mut out = Array2::zeros((n, self.spec().n_classes));
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let p = self.forward(batch_tensor(windows, chunk), Mode::Eval)?;
            out.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&p);
        }
        Ok(out)
    }

    /// Trial-level predictions: windows are grouped by trial id.
    pub fn predict_trials(&mut self, windows: &EpochSet, batch: usize) -> Result<Vec<(usize, u8)>> {
        let probs = self.predict_proba(windows, batch)?;
        let mut groups: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
        for (i, &id) in windows.trial_ids().iter().enumerate() {
            let row = probs.row(i).to_vec();
            match groups.iter_mut().find(|(g, _)| *g == id) {
                Some((_, v)) => v.push(row),
                None => groups.push((id, vec![row])),
            }
        }
        Ok(groups.into_iter().map(|(id, p)| (id, predict_trial(&p) as u8)).collect())
    }
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains `net` on labelled windows. Shuffling and dropout masks come from
/// named streams of `config.seed`, so equal inputs give bit-identical models.
pub fn train<T: Real>(net: &mut Network<T>, windows: &EpochSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let n = windows.n_trials();
    if n == 0 {
        return Err(Error::EmptyInput("no training windows".into()));
    }
    let streams = SeedStream::new(config.seed);
    let labels = windows.labels();
    let mut adam = Adam {
        m: net.params_mut().iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        v: net.params_mut().iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        step: 0,
    };
    let mut report = TrainReport { loss_curve: Vec::new(), accuracy_curve: Vec::new(), stopped_early: false };
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut streams.rng("shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = batch_tensor::<T>(windows, chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            net.zero_grad();
            let seed = streams.seed("dropout", (epoch * n + b) as u64);
            let probs = net.forward(x, Mode::Train { seed })?;
            let loss = net.backward(&y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += probs
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(r, &l)| argmax(&r.to_vec()) == l as usize)
                .count();
            apply_update(net, &mut adam, config);
        }
        let loss = loss_sum / n as f64;
        report.loss_curve.push(loss);
        report.accuracy_curve.push(correct as f64 / n as f64);
        if loss < best - 1e-4 {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}

fn apply_update<T: Real>(net: &mut Network<T>, adam: &mut Adam<T>, config: &TrainConfig) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            let lr = T::of(lr);
            for p in net.params_mut() {
                for (v, &g) in p.value.iter_mut().zip(&p.grad) {
                    *v -= lr * g;
                }
            }
        }
        Optimizer::Adam => {
            adam.step += 1;
            let t = adam.step;
            let step = T::of(lr * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t)));
            let (b1, b2, eps) = (T::of(BETA1), T::of(BETA2), T::of(ADAM_EPS));
            let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
            for ((p, m), v) in net.params_mut().into_iter().zip(&mut adam.m).zip(&mut adam.v) {
                for i in 0..p.value.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + one_b1 * g;
                    v[i] = b2 * v[i] + one_b2 * g * g;
                    p.value[i] -= step * m[i] / (v[i].sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub probes: usize,
    /// `max |fd - g| / max(|fd|, |g|, 1e-7)` over the probed parameters.
    pub max_relative_error: f64,
    /// Draws rejected because the `+eps` or `-eps` evaluation flipped the
    /// sign of some activation input.
    pub kinks_skipped: usize,
}

/// Compares backprop gradients with central differences of step `eps` on
/// `probes` randomly chosen parameters of a freshly initialized `f64`
/// network, in train mode with a fixed dropout mask. The output layer is
/// randomized so every layer receives gradient, and convolution kernels are
/// multiplied by `kernel_scale` (each conv feeds a batch norm, so the function
/// is unchanged while the finite-difference truncation error shrinks).
///
/// A central difference across an activation kink is not a derivative
/// estimate, so a draw whose perturbed passes change the activation sign
/// pattern is replaced by a fresh draw.
pub fn gradient_check(
    spec: &ModelSpec,
    seed: u64,
    batch: usize,
    probes: usize,
    eps: f64,
    kernel_scale: f64,
) -> Result<GradientCheck> {
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    let streams = SeedStream::new(seed);
    let mut net = Network::<f64>::new(spec, seed)?;
    net.randomize_head(&mut streams.rng("gradcheck-head", 0));
    net.scale_conv_kernels(kernel_scale);
    let mut rng = streams.rng("gradcheck-input", 0);
    let dims = [batch, 1, spec.n_channels, spec.input_samples];
    let data = (0..dims.iter().product::<usize>()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Tensor4::from_vec(dims, data)?;
    let labels: Vec<u8> = (0..batch).map(|i| (i % spec.n_classes) as u8).collect();
    let mode = Mode::Train { seed: streams.seed("gradcheck-dropout", 0) };
    let loss = |net: &mut Network<f64>| -> Result<(f64, Vec<bool>)> {
        net.forward(x.clone(), mode)?;
        let signs = net.activation_signs();
        Ok((net.backward(&labels)?, signs))
    };
    net.zero_grad();
    let (_, base) = loss(&mut net)?;
    let grads = net.gradients();
    let params = net.parameters();
    let mut pick = streams.rng("gradcheck-probe", 0);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut skipped = 0;
    while done < probes {
        if skipped > 10 * probes.max(1) {
            return Err(Error::Numeric(format!("{skipped} probes straddled activation kinks")));
        }
        let i = pick.random_range(0..params.len());
        net.set_parameter(i, params[i] + eps)?;
        let (up, s_up) = loss(&mut net)?;
        net.set_parameter(i, params[i] - eps)?;
        let (down, s_down) = loss(&mut net)?;
        net.set_parameter(i, params[i])?;
        if s_up != base || s_down != base {
            skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-7));
        done += 1;
    }
    Ok(GradientCheck { probes, max_relative_error: worst, kinks_skipped: skipped })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    spec: ModelSpec,
    #[serde(default)]
    config: Option<TrainConfig>,
    n_values: usize,
}

/// Checkpoint: JSON header (layer specs, training config) plus parameters and
/// batch-norm statistics as float32 in declaration order.
pub fn checkpoint_bytes<T: Real>(net: &Network<T>, config: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let state = net.state();
    let header = CheckpointHeader {
        kind: "cnn".into(),
        spec: net.spec().clone(),
        config: config.cloned(),
        n_values: state.len(),
    };
    container::encode(&header, state.iter().map(|&v| v as f32))
}

pub fn load_checkpoint_bytes<T: Real>(bytes: &[u8]) -> Result<(Network<T>, Option<TrainConfig>)> {
    let (h, payload): (CheckpointHeader, Vec<f32>) = container::decode(bytes)?;
    if h.kind != "cnn" {
        return Err(Error::Format(format!("not a CNN checkpoint: {}", h.kind)));
    }
    if payload.len() != h.n_values {
        return Err(Error::Corruption(format!("{} values, header says {}", payload.len(), h.n_values)));
    }
    let mut net = Network::new(&h.spec, 0)?;
    let state: Vec<f64> = payload.iter().map(|&v| f64::from(v)).collect();
    net.load_state(&state)?;
    Ok((net, h.config))
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    container::write_file(path.as_ref(), &checkpoint_bytes(net, config)?)
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(Network<T>, Option<TrainConfig>)> {
    load_checkpoint_bytes(&container::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests;
