use serde::{Deserialize, Serialize};

use crate::eeg::N_CLASSES;
use crate::error::{Error, Result};

/// Window length fed to the network: 2 s at 250 Hz.
pub const INPUT_SAMPLES: usize = 500;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { maps_out: usize, kernel: [usize; 2], stride: [usize; 2], bias: bool },
    BatchNorm,
    Activation { function: Activation },
    Dropout { rate: f64 },
    AvgPool { kernel: [usize; 2], stride: [usize; 2] },
    Flatten,
    Dense { units: usize },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// `floor((input - kernel) / stride) + 1`, or `None` when the kernel does
/// not fit or the stride is zero.
pub fn output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub n_channels: usize,
    pub input_samples: usize,
    pub n_classes: usize,
}

/// The decoding network for `n_channels` electrodes with default dropout and
/// ELU activations.
pub fn build_model(n_channels: usize) -> ModelSpec {
    build_model_with(n_channels, DEFAULT_DROPOUT, Activation::Elu)
}

pub fn build_model_with(n_channels: usize, dropout: f64, activation: Activation) -> ModelSpec {
    use LayerSpec::*;
    let act = Activation { function: activation };
    let conv = |maps_out, kernel| Conv { maps_out, kernel, stride: [1, 1], bias: false };
    let pool = AvgPool { kernel: [1, 4], stride: [1, 4] };
    let layers = vec![
        conv(25, [1, 125]),
        BatchNorm,
        act.clone(),
        Dropout { rate: dropout },
        conv(25, [n_channels, 1]),
        BatchNorm,
        act.clone(),
        pool.clone(),
        Dropout { rate: dropout },
        conv(50, [1, 15]),
        BatchNorm,
        act.clone(),
        pool.clone(),
        Dropout { rate: dropout },
        conv(100, [1, 15]),
        BatchNorm,
        act,
        pool,
        Flatten,
        Dense { units: N_CLASSES },
        Softmax,
    ];
    ModelSpec { layers, n_channels, input_samples: INPUT_SAMPLES, n_classes: N_CLASSES }
}

/// The same layer sequence at reduced size: kernels and maps scaled down so a
/// `width`-sample input stays valid, for finite-difference checks.
pub fn reduced_model(n_channels: usize, width: usize, dropout: f64) -> ModelSpec {
    use LayerSpec::*;
    let act = Activation { function: self::Activation::Elu };
    let conv = |maps_out, kernel| Conv { maps_out, kernel, stride: [1, 1], bias: false };
    let pool = AvgPool { kernel: [1, 2], stride: [1, 2] };
    let layers = vec![
        conv(4, [1, 5]),
        BatchNorm,
        act.clone(),
        Dropout { rate: dropout },
        conv(4, [n_channels, 1]),
        BatchNorm,
        act.clone(),
        pool.clone(),
        Dropout { rate: dropout },
        conv(6, [1, 5]),
        BatchNorm,
        act.clone(),
        pool.clone(),
        Dropout { rate: dropout },
        conv(8, [1, 3]),
        BatchNorm,
        act,
        pool,
        Flatten,
        Dense { units: N_CLASSES },
        Softmax,
    ];
    ModelSpec { layers, n_channels, input_samples: width, n_classes: N_CLASSES }
}

impl ModelSpec {
    /// Output shape `[maps, height, width]` after every layer, validating
    /// the composition along the way.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.n_channels == 0 || self.input_samples == 0 {
            return Err(Error::Shape("model input must be non-empty".into()));
        }
        let mut cur = [1, self.n_channels, self.input_samples];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.name()));
            cur = match layer {
                LayerSpec::Conv { maps_out, kernel, stride, .. } => {
                    if *maps_out == 0 {
                        return Err(fail("zero output maps".into()));
                    }
                    let h = output_len(cur[1], kernel[0], stride[0]);
                    let w = output_len(cur[2], kernel[1], stride[1]);
                    match (h, w) {
                        (Some(h), Some(w)) => [*maps_out, h, w],
                        _ => return Err(fail(format!("kernel {kernel:?} does not fit input {cur:?}"))),
                    }
                }
                LayerSpec::AvgPool { kernel, stride } => {
                    let h = output_len(cur[1], kernel[0], stride[0]);
                    let w = output_len(cur[2], kernel[1], stride[1]);
                    match (h, w) {
                        (Some(h), Some(w)) => [cur[0], h, w],
                        _ => return Err(fail(format!("kernel {kernel:?} does not fit input {cur:?}"))),
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(fail(format!("rate {rate} outside [0, 1)")));
                    }
                    cur
                }
                LayerSpec::BatchNorm | LayerSpec::Activation { .. } => cur,
                LayerSpec::Flatten => [cur[0] * cur[1] * cur[2], 1, 1],
                LayerSpec::Dense { units } => {
                    if cur[1] != 1 || cur[2] != 1 {
                        return Err(fail("dense layer needs a flattened input".into()));
                    }
                    if *units == 0 {
                        return Err(fail("zero units".into()));
                    }
                    [*units, 1, 1]
                }
                LayerSpec::Softmax => {
                    if cur[1] != 1 || cur[2] != 1 {
                        return Err(fail("softmax needs a flattened input".into()));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        match (self.layers.last(), out.last()) {
            (Some(LayerSpec::Softmax), Some(s)) if s[0] == self.n_classes => Ok(out),
            _ => Err(Error::Shape(format!("model must end in a {}-way softmax", self.n_classes))),
        }
    }

    /// Shapes of the convolution, pooling, flatten and softmax layers,
    /// batch dimension first, in the tabulated layout: 4-d for feature maps,
    /// 2-d after flattening.
    pub fn table_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(shapes)
            .filter_map(|(l, s)| match l {
                LayerSpec::Conv { .. } | LayerSpec::AvgPool { .. } => Some((l.name(), vec![1, s[0], s[1], s[2]])),
                LayerSpec::Flatten | LayerSpec::Softmax => Some((l.name(), vec![1, s[0]])),
                _ => None,
            })
            .collect())
    }
}
