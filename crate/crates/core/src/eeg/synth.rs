//! Seeded synthetic EEG with planted phase-coupled oscillations.
//!
//! Every channel carries background noise: 1/f ("pink") and white components
//! of equal power. During the imagery phase of each trial, the channels
//! planted for the trial's class additionally carry a sinusoid at the class
//! carrier frequency with a phase shared across those channels. Phase coupling
//! below 1 is produced by a slowly varying Gaussian phase jitter per channel
//! whose variance is `-ln(coupling)`, so the expected pairwise PLV of the clean
//! oscillations equals `coupling`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EegRecording, Event, Montage, TrialTimeline, ANALYSIS_FS, N_CLASSES, RAW_FS};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

const JITTER_TAU_S: f64 = 0.1;
const ONSET_TAPER_S: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_trials_per_class: usize,
    /// Electrode names carrying the oscillation, one list per class.
    pub planted_channels: Vec<Vec<String>>,
    /// One carrier frequency per class, within the 0.5-13 Hz analysis band.
    pub carrier_hz: Vec<f64>,
    /// Target phase locking between planted channels, in (0, 1].
    pub coupling: f64,
    /// Oscillation power over broadband noise power, in dB. `+inf` disables noise.
    pub snr_db: f64,
    /// Pipeline configs leave this out; the pipeline derives it from the root seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fs")]
    pub fs: u32,
    /// Delay of the oscillation after imagery onset.
    #[serde(default = "default_onset_ms")]
    pub onset_ms: f64,
    /// Peak amplitude of the planted oscillation in microvolts.
    #[serde(default = "default_signal_uv")]
    pub signal_uv: f64,
}

fn default_fs() -> u32 {
    RAW_FS
}

fn default_onset_ms() -> f64 {
    500.0
}

fn default_signal_uv() -> f64 {
    20.0
}

impl SynthSpec {
    /// Four classes over eight prefrontal/occipital electrodes. Each class
    /// leaves out a different pair, so classes differ spatially as well as in
    /// carrier frequency.
    pub fn demo(seed: u64) -> Self {
        let union = ["Fp1", "Fp2", "AF7", "AF8", "O1", "O2", "Oz", "POz"];
        let dropped = [["Fp1", "O1"], ["Fp2", "O2"], ["AF7", "Oz"], ["AF8", "POz"]];
        let planted_channels = dropped
            .iter()
            .map(|d| {
                union
                    .iter()
                    .filter(|c| !d.contains(c))
                    .map(|c| c.to_string())
                    .collect()
            })
            .collect();
        Self {
            n_trials_per_class: 50,
            planted_channels,
            carrier_hz: vec![8.0, 8.0, 11.0, 11.0],
            coupling: 0.9,
            snr_db: 10.0,
            seed,
            fs: RAW_FS,
            onset_ms: default_onset_ms(),
            signal_uv: default_signal_uv(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.carrier_hz.len()
    }

    /// Union of planted channels, as montage indices in ascending order.
    pub fn planted_union(&self, montage: &Montage) -> Result<Vec<usize>> {
        let mut all = Vec::new();
        for set in &self.planted_channels {
            all.extend(montage.indices_of(set)?);
        }
        all.sort_unstable();
        all.dedup();
        Ok(all)
    }

    pub fn validate(&self, montage: &Montage) -> Result<()> {
        let k = self.carrier_hz.len();
        if k == 0 || k > N_CLASSES {
            return Err(Error::Range(format!("{k} classes; expected 1..={N_CLASSES}")));
        }
        if self.planted_channels.len() != k {
            return Err(Error::Shape(format!(
                "{} planted channel sets for {k} carriers",
                self.planted_channels.len()
            )));
        }
        for set in &self.planted_channels {
            montage.indices_of(set)?;
        }
        for &f in &self.carrier_hz {
            if !(0.5..=13.0).contains(&f) {
                return Err(Error::Range(format!("carrier {f} Hz outside 0.5-13 Hz")));
            }
        }
        if !(self.coupling > 0.0 && self.coupling <= 1.0) {
            return Err(Error::Range(format!("coupling {} outside (0, 1]", self.coupling)));
        }
        if self.n_trials_per_class == 0 {
            return Err(Error::Range("need at least one trial per class".into()));
        }
        if self.fs != RAW_FS && self.fs != ANALYSIS_FS {
            return Err(Error::Range(format!("fs {} not supported", self.fs)));
        }
        if self.snr_db.is_nan() || !(self.signal_uv > 0.0) || self.onset_ms < 0.0 {
            return Err(Error::Range("snr_db, signal_uv or onset_ms invalid".into()));
        }
        Ok(())
    }
}

/// Generates a continuous recording over the standard montage, one event per
/// trial start, trials in seeded random class order.
pub fn synth_dataset(spec: &SynthSpec) -> Result<EegRecording> {
    let montage = Montage::standard();
    spec.validate(&montage)?;
    let streams = SeedStream::new(spec.seed);
    let tl = TrialTimeline::default();
    let fs = spec.fs;
    let fsf = f64::from(fs);
    let trial_len = tl.trial_samples(fs);
    let n_classes = spec.n_classes();
    let n_trials = spec.n_trials_per_class * n_classes;
    let len = trial_len * n_trials;

    let mut labels: Vec<u8> = (0..n_classes)
        .flat_map(|c| std::iter::repeat_n(c as u8, spec.n_trials_per_class))
        .collect();
    labels.shuffle(&mut streams.rng("synth-order", 0));

    let signal_rms = spec.signal_uv / 2f64.sqrt();
    let noise_rms = signal_rms / 10f64.powf(spec.snr_db / 20.0);

    let mut data = Array2::<f32>::zeros((montage.len(), len));
    let mut pink = vec![0.0f64; len];
    let mut white = vec![0.0f64; len];
    if noise_rms > 0.0 {
        for ch in 0..montage.len() {
            let mut rng = streams.rng("synth-noise", ch as u64);
            let mut p = Pinker::default();
            for t in 0..len {
                pink[t] = p.next(rng.sample(StandardNormal));
                white[t] = rng.sample(StandardNormal);
            }
            let pink_sd = std_dev(&pink);
            let pink_gain = if pink_sd > 0.0 { noise_rms / 2f64.sqrt() / pink_sd } else { 0.0 };
            let white_gain = noise_rms / 2f64.sqrt();
            let mut row = data.row_mut(ch);
            for (t, v) in row.iter_mut().enumerate() {
                *v = (pink[t] * pink_gain + white[t] * white_gain) as f32;
            }
        }
    }

    let planted: Vec<Vec<usize>> = spec
        .planted_channels
        .iter()
        .map(|s| montage.indices_of(s))
        .collect::<Result<_>>()?;
    let onset = tl.imagery_onset_samples(fs) + (spec.onset_ms * fsf / 1000.0).round() as usize;
    let rho = (-1.0 / (JITTER_TAU_S * fsf)).exp();
    let jitter_sd = (-spec.coupling.ln()).max(0.0).sqrt();
    let taper = (ONSET_TAPER_S * fsf).round().max(1.0);

    let mut events = Vec::with_capacity(n_trials);
    for (k, &label) in labels.iter().enumerate() {
        let start = k * trial_len;
        events.push(Event { sample: start, label });
        let a = start + onset;
        let b = start + trial_len;
        if a >= b {
            continue;
        }
        let c = label as usize;
        let omega = 2.0 * PI * spec.carrier_hz[c] / fsf;
        let theta: f64 = streams.rng("synth-trial", k as u64).random_range(0.0..2.0 * PI);
        for &ch in &planted[c] {
            let mut rng = streams.rng("synth-jitter", (k * montage.len() + ch) as u64);
            let mut jitter = if jitter_sd > 0.0 {
                jitter_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let innov = jitter_sd * (1.0 - rho * rho).sqrt();
            let mut row = data.row_mut(ch);
            for t in a..b {
                let i = (t - a) as f64;
                let ramp = if i < taper { 0.5 - 0.5 * (PI * i / taper).cos() } else { 1.0 };
                let s = spec.signal_uv * ramp * (omega * i + theta + jitter).sin();
                row[t] += s as f32;
                if jitter_sd > 0.0 {
                    jitter = rho * jitter + innov * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    EegRecording::new(montage, fs, data, events)
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Paul Kellet's pinking filter: a bank of one-pole low-passes approximating a
/// -3 dB/octave slope over roughly nine octaves.
#[derive(Default)]
struct Pinker {
    b: [f64; 7],
}

impl Pinker {
    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out
    }
}
