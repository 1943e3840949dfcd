use std::f64::consts::PI;

use num_complex::Complex64;

use super::fft::FftPlan;
use crate::csv::{num, CsvWriter};
use crate::error::{Error, Result};

/// One-sided power spectral density in uV^2/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        if self.freqs_hz.len() > 1 {
            self.freqs_hz[1] - self.freqs_hz[0]
        } else {
            0.0
        }
    }

    /// Trapezoidal integral of the density over `[lo, hi]` Hz. Band edges
    /// falling between bins are handled by linear interpolation.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let f = &self.freqs_hz;
        let p = &self.power;
        let mut total = 0.0;
        for i in 1..f.len() {
            let (a, b) = (f[i - 1].max(lo), f[i].min(hi));
            if b <= a {
                continue;
            }
            let lerp = |x: f64| p[i - 1] + (p[i] - p[i - 1]) * (x - f[i - 1]) / (f[i] - f[i - 1]);
            total += 0.5 * (lerp(a) + lerp(b)) * (b - a);
        }
        total
    }

    /// Frequency of the largest bin.
    pub fn peak_hz(&self) -> f64 {
        let i = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.freqs_hz[i]
    }
}

/// Welch's method: periodic Hann windows of `seg_len` samples overlapping by
/// `overlap` (a fraction in [0, 1)), each segment mean-removed, periodograms
/// averaged.
pub fn welch_psd(x: &[f64], fs: f64, seg_len: usize, overlap: f64) -> Result<Spectrum> {
    let mut w = Welch::new(fs, seg_len, overlap)?;
    w.psd(x)
}

/// Reusable Welch estimator for many series of the same segment length.
pub struct Welch {
    fs: f64,
    seg_len: usize,
    step: usize,
    window: Vec<f64>,
    scale: f64,
    plan: FftPlan,
    buf: Vec<Complex64>,
}

impl Welch {
    pub fn new(fs: f64, seg_len: usize, overlap: f64) -> Result<Self> {
        if seg_len == 0 {
            return Err(Error::Range("segment length must be positive".into()));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Range(format!("overlap {overlap} outside [0, 1)")));
        }
        let window: Vec<f64> = (0..seg_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg_len as f64).cos())
            .collect();
        let wss: f64 = window.iter().map(|v| v * v).sum();
        let step = (seg_len - (overlap * seg_len as f64).round() as usize).max(1);
        Ok(Self {
            fs,
            seg_len,
            step,
            scale: 1.0 / (fs * if wss > 0.0 { wss } else { 1.0 }),
            window,
            plan: FftPlan::new(seg_len)?,
            buf: Vec::with_capacity(seg_len),
        })
    }

    pub fn psd(&mut self, x: &[f64]) -> Result<Spectrum> {
        let n = self.seg_len;
        if n > x.len() {
            return Err(Error::Range(format!("segment length {n} exceeds series length {}", x.len())));
        }
        let n_bins = n / 2 + 1;
        let mut acc = vec![0.0; n_bins];
        let mut count = 0usize;
        let mut start = 0;
        while start + n <= x.len() {
            let seg = &x[start..start + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            self.buf.clear();
            self.buf
                .extend(seg.iter().zip(&self.window).map(|(v, w)| Complex64::new((v - mean) * w, 0.0)));
            self.plan.forward_in_place(&mut self.buf);
            for (a, v) in acc.iter_mut().zip(&self.buf) {
                *a += v.norm_sqr();
            }
            count += 1;
            start += self.step;
        }
        let nyquist_bin = if n % 2 == 0 { Some(n / 2) } else { None };
        let power = acc
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let one_sided = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
                a / count as f64 * self.scale * one_sided
            })
            .collect();
        let freqs_hz = (0..n_bins).map(|k| k as f64 * self.fs / n as f64).collect();
        Ok(Spectrum { freqs_hz, power })
    }
}

/// CSV with one frequency column followed by one column per spectrum.
pub fn spectra_to_csv(names: &[String], spectra: &[Spectrum]) -> Result<String> {
    if names.len() != spectra.len() {
        return Err(Error::Shape(format!("{} names for {} spectra", names.len(), spectra.len())));
    }
    let mut w = CsvWriter::new();
    w.row(std::iter::once("freq_hz".to_string()).chain(names.iter().cloned()));
    if let Some(first) = spectra.first() {
        for (k, &f) in first.freqs_hz.iter().enumerate() {
            w.row(std::iter::once(num(f)).chain(spectra.iter().map(|s| num(s.power[k]))));
        }
    }
    Ok(w.finish())
}
