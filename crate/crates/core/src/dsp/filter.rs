//! Butterworth band-pass as a cascade of biquads, zero-phase application and
//! integer decimation.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Order of the analog low-pass prototype. The resulting band-pass has twice
/// this order, realised as `BANDPASS_ORDER` biquads.
pub const BANDPASS_ORDER: usize = 4;

/// One second-order section, `a[0]` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }

    /// Transposed direct-form II state reached after a long unit step.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let det = 1.0 + a1 + a2;
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        [(r0 + r1) / det, ((1.0 + a1) * r1 - a2 * r0) / det]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Second-order-section cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Digital Butterworth band-pass designed through the bilinear transform
    /// with pre-warped band edges.
    pub fn butter_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(Error::Range("filter order must be positive".into()));
        }
        if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
            return Err(Error::Range(format!(
                "band [{lo_hz}, {hi_hz}] Hz invalid for fs = {fs} Hz"
            )));
        }
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2) = (warp(lo_hz), warp(hi_hz));
        let bw = w2 - w1;
        let w0_sq = w1 * w2;
        let fs2 = 2.0 * fs;

        // Low-pass prototype poles in the left half plane, upper half only;
        // conjugates are implied by the real-coefficient sections.
        let mut poles = Vec::with_capacity(order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            // low-pass -> band-pass: each prototype pole yields two poles
            let half = p * bw / 2.0;
            let disc = (half * half - w0_sq).sqrt();
            for s in [half + disc, half - disc] {
                let z = (fs2 + s) / (fs2 - s);
                if z.im > 0.0 {
                    poles.push(z);
                }
            }
        }
        poles.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        debug_assert_eq!(poles.len(), order);

        let mut sections: Vec<Biquad> = poles
            .iter()
            .map(|p| Biquad {
                // one zero at z = 1 (from s = 0) and one at z = -1 (from s = inf)
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();

        // Normalise to unit gain at the geometric centre frequency.
        let f0 = (w0_sq.sqrt() / fs2).atan() * fs / PI;
        let z0 = Complex64::from_polar(1.0, 2.0 * PI * f0 / fs);
        let g: Complex64 = sections.iter().map(|s| s.response(z0)).product();
        let gain = 1.0 / g.norm();
        for v in &mut sections[0].b {
            *v *= gain;
        }
        Ok(Sos { sections })
    }

    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * f_hz / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Causal filtering from an initial state per section.
    fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (sec, st) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            let (mut z0, mut z1) = (st[0], st[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z0;
                z0 = b1 * xin - a1 * y + z1;
                z1 = b2 * xin - a2 * y;
                *v = y;
            }
            *st = [z0, z1];
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut st = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut y, &mut st);
        y
    }

    /// Per-section states for a steady unit step through the whole cascade.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Forward-backward (zero-phase) filtering. The signal is extended at both
    /// ends by odd reflection over `3 * order` samples and each pass starts
    /// from the steady state of its first sample.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 2 {
            return Err(Error::Range(format!("filtfilt needs >= 2 samples, got {n}")));
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.step_states();
        let scaled = |x0: f64| -> Vec<[f64; 2]> { zi.iter().map(|s| [s[0] * x0, s[1] * x0]).collect() };

        let mut st = scaled(ext[0]);
        self.run(&mut ext, &mut st);
        ext.reverse();
        let mut st = scaled(ext[0]);
        self.run(&mut ext, &mut st);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase Butterworth band-pass of the default order.
pub fn bandpass(x: &[f64], lo_hz: f64, hi_hz: f64, fs: f64) -> Result<Vec<f64>> {
    Sos::butter_bandpass(BANDPASS_ORDER, lo_hz, hi_hz, fs)?.filtfilt(x)
}

/// Keeps every `factor`-th sample starting at 0. The input must already be
/// band-limited below the new Nyquist frequency.
pub fn downsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor < 1 {
        return Err(Error::Range("decimation factor must be >= 1".into()));
    }
    Ok(x.iter().step_by(factor).copied().collect())
}
