//! Event-related spectral perturbation by short-time Fourier transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use crate::csv::{num, CsvWriter};
use crate::eeg::EpochSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErspConfig {
    /// Hann window length in samples.
    pub window: usize,
    /// Output time points after interpolation.
    pub n_times: usize,
    pub baseline_ms: (f64, f64),
    pub f_range: (f64, f64),
}

impl Default for ErspConfig {
    fn default() -> Self {
        Self {
            window: 256,
            n_times: 400,
            baseline_ms: (-500.0, 0.0),
            f_range: (3.0, 50.0),
        }
    }
}

/// Time-frequency map of one channel in dB relative to the baseline window.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMap {
    pub channel: String,
    pub freqs_hz: Vec<f64>,
    pub times_ms: Vec<f64>,
    /// `values[f][t]`
    pub values: Vec<Vec<f64>>,
}

impl TfMap {
    /// Mean dB over the block `freq in [f_lo, f_hi]`, `time in [t_lo, t_hi)`.
    pub fn block_mean(&self, f_lo: f64, f_hi: f64, t_lo: f64, t_hi: f64) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (fi, &f) in self.freqs_hz.iter().enumerate() {
            if f < f_lo || f > f_hi {
                continue;
            }
            for (ti, &t) in self.times_ms.iter().enumerate() {
                if t >= t_lo && t < t_hi {
                    sum += self.values[fi][ti];
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Header row of times, then one row per frequency.
    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new();
        w.row(std::iter::once("freq_hz".to_string()).chain(self.times_ms.iter().map(|&t| num(t))));
        for (f, row) in self.freqs_hz.iter().zip(&self.values) {
            w.row(std::iter::once(num(*f)).chain(row.iter().map(|&v| num(v))));
        }
        w.finish()
    }
}

/// ERSP for every channel with the default STFT configuration.
pub fn ersp(epochs: &EpochSet, baseline_ms: (f64, f64), f_range: (f64, f64)) -> Result<Vec<TfMap>> {
    let cfg = ErspConfig {
        baseline_ms,
        f_range,
        ..ErspConfig::default()
    };
    let all: Vec<usize> = (0..epochs.n_channels()).collect();
    ersp_channels(epochs, &all, &cfg)
}

/// ERSP for a subset of channels.
pub fn ersp_channels(epochs: &EpochSet, channels: &[usize], cfg: &ErspConfig) -> Result<Vec<TfMap>> {
    let n = epochs.n_samples();
    let win = cfg.window;
    if epochs.n_trials() == 0 {
        return Err(Error::EmptyInput("no trials".into()));
    }
    if win < 2 || n < win || cfg.n_times < 2 {
        return Err(Error::Range(format!("{n}-sample epochs cannot hold a {win}-sample window")));
    }
    let (b0, b1) = cfg.baseline_ms;
    if !(b0 < b1) {
        return Err(Error::Range(format!("baseline [{b0}, {b1}) ms is empty")));
    }
    if epochs.t0_ms() > b0 {
        return Err(Error::Range(format!(
            "epochs start at {} ms, after the baseline start {b0} ms",
            epochs.t0_ms()
        )));
    }
    let fs = f64::from(epochs.fs());
    let hop = ((n - win) / (cfg.n_times - 1)).max(1);
    let n_frames = (n - win) / hop + 1;
    let ms_per_sample = 1000.0 / fs;
    let frame_ms = |k: usize| epochs.t0_ms() + (k * hop) as f64 * ms_per_sample + win as f64 / 2.0 * ms_per_sample;
    let (first, last) = (frame_ms(0), frame_ms(n_frames - 1));
    let times_ms: Vec<f64> = (0..cfg.n_times)
        .map(|i| first + (last - first) * i as f64 / (cfg.n_times - 1) as f64)
        .collect();
    let base_idx: Vec<usize> = (0..cfg.n_times)
        .filter(|&i| times_ms[i] >= b0 && times_ms[i] < b1)
        .collect();
    if base_idx.is_empty() {
        return Err(Error::Range(format!(
            "no time point of [{first:.1}, {last:.1}] ms falls in the baseline [{b0}, {b1}) ms"
        )));
    }

    let bins: Vec<usize> = (0..=win / 2)
        .filter(|&k| {
            let f = k as f64 * fs / win as f64;
            f >= cfg.f_range.0 && f <= cfg.f_range.1
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Range(format!("no frequency bin in {:?} Hz", cfg.f_range)));
    }
    let freqs_hz: Vec<f64> = bins.iter().map(|&k| k as f64 * fs / win as f64).collect();

    let plan = FftPlan::new(win)?;
    let hann: Vec<f64> = (0..win).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos()).collect();
    let mut buf = Vec::with_capacity(win);
    let data = epochs.data();

    let mut maps = Vec::with_capacity(channels.len());
    for &ch in channels {
        if ch >= epochs.n_channels() {
            return Err(Error::Range(format!("channel {ch} out of range")));
        }
        // power[frame][bin], averaged over trials
        let mut power = vec![vec![0.0; bins.len()]; n_frames];
        for tr in 0..epochs.n_trials() {
            let x = data.slice(ndarray::s![tr, ch, ..]);
            for (k, p) in power.iter_mut().enumerate() {
                let a = k * hop;
                buf.clear();
                buf.extend((0..win).map(|i| Complex64::new(f64::from(x[a + i]) * hann[i], 0.0)));
                plan.forward_in_place(&mut buf);
                for (pv, &b) in p.iter_mut().zip(&bins) {
                    *pv += buf[b].norm_sqr();
                }
            }
        }
        let inv_trials = 1.0 / epochs.n_trials() as f64;
        // linear interpolation of frame powers onto the output grid
        let frame_pos = |t: f64| ((t - first) / (hop as f64 * ms_per_sample)).clamp(0.0, (n_frames - 1) as f64);
        let mut values = vec![vec![0.0; cfg.n_times]; bins.len()];
        for (fi, row) in values.iter_mut().enumerate() {
            let interp: Vec<f64> = times_ms
                .iter()
                .map(|&t| {
                    let pos = frame_pos(t);
                    let i = pos.floor() as usize;
                    let j = (i + 1).min(n_frames - 1);
                    let w = pos - i as f64;
                    ((1.0 - w) * power[i][fi] + w * power[j][fi]) * inv_trials
                })
                .collect();
            let base = base_idx.iter().map(|&i| interp[i]).sum::<f64>() / base_idx.len() as f64;
            for (v, p) in row.iter_mut().zip(&interp) {
                *v = 10.0 * (p.max(1e-300) / base.max(1e-300)).log10();
            }
        }
        maps.push(TfMap {
            channel: epochs.montage().name(ch).to_string(),
            freqs_hz: freqs_hz.clone(),
            times_ms: times_ms.clone(),
            values,
        });
    }
    Ok(maps)
}
