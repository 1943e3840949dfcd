//! Signal-processing kernels and their application to recordings and epochs.

mod ersp;
mod fft;
mod filter;
mod psd;

use ndarray::{Array2, Array3, Axis};

pub use ersp::{ersp, ersp_channels, ErspConfig, TfMap};
pub use fft::{analytic_signal, fft, ifft, rfft, FftPlan};
#[allow(unused_imports)]
pub(crate) use fft::analytic_signal_with;
pub use filter::{bandpass, downsample, Biquad, Sos, BANDPASS_ORDER};
pub use num_complex::Complex64;
pub use psd::{spectra_to_csv, welch_psd, Spectrum, Welch};

use crate::eeg::{EegRecording, EpochSet, Event};
use crate::error::{Error, Result};

/// Analysis band used throughout.
pub const BAND_HZ: (f64, f64) = (0.5, 13.0);

/// Band-passes every channel of a continuous recording, then decimates by
/// `factor`. Event positions are divided by `factor`.
pub fn preprocess(rec: &EegRecording, band: (f64, f64), factor: usize) -> Result<EegRecording> {
    if factor < 1 {
        return Err(Error::Range("decimation factor must be >= 1".into()));
    }
    let fs = rec.fs();
    if fs as usize % factor != 0 {
        return Err(Error::Range(format!("{fs} Hz is not divisible by {factor}")));
    }
    let sos = Sos::butter_bandpass(BANDPASS_ORDER, band.0, band.1, f64::from(fs))?;
    let n_out = rec.n_samples().div_ceil(factor);
    let mut out = Array2::<f32>::zeros((rec.montage().len(), n_out));
    let mut row64 = Vec::with_capacity(rec.n_samples());
    for (src, mut dst) in rec.data().axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        row64.clear();
        row64.extend(src.iter().map(|&v| f64::from(v)));
        let y = sos.filtfilt(&row64)?;
        for (d, v) in dst.iter_mut().zip(y.iter().step_by(factor)) {
            *d = *v as f32;
        }
    }
    let events = rec
        .events()
        .iter()
        .map(|e| Event {
            sample: e.sample / factor,
            label: e.label,
        })
        .collect();
    EegRecording::new(rec.montage().clone(), fs / factor as u32, out, events)
}

/// Zero-phase band-pass of every trial and channel.
pub fn bandpass_epochs(epochs: &EpochSet, band: (f64, f64)) -> Result<EpochSet> {
    let sos = Sos::butter_bandpass(BANDPASS_ORDER, band.0, band.1, f64::from(epochs.fs()))?;
    let mut data = Array3::<f32>::zeros(epochs.data().dim());
    let mut buf = Vec::with_capacity(epochs.n_samples());
    for (src, mut dst) in epochs
        .data()
        .lanes(Axis(2))
        .into_iter()
        .zip(data.lanes_mut(Axis(2)))
    {
        buf.clear();
        buf.extend(src.iter().map(|&v| f64::from(v)));
        let y = sos.filtfilt(&buf)?;
        for (d, v) in dst.iter_mut().zip(&y) {
            *d = *v as f32;
        }
    }
    epochs.with_data(data, epochs.fs(), epochs.t0_ms())
}

/// Welch PSD of every channel averaged over trials (default 1 s segments,
/// 50% overlap).
pub fn epochs_psd(epochs: &EpochSet) -> Result<Vec<Spectrum>> {
    let seg = (epochs.fs() as usize).min(epochs.n_samples());
    let mut welch = Welch::new(f64::from(epochs.fs()), seg, 0.5)?;
    let mut out = Vec::with_capacity(epochs.n_channels());
    let mut buf = Vec::with_capacity(epochs.n_samples());
    for ch in 0..epochs.n_channels() {
        let mut acc: Option<Spectrum> = None;
        for tr in 0..epochs.n_trials() {
            buf.clear();
            buf.extend(epochs.data().slice(ndarray::s![tr, ch, ..]).iter().map(|&v| f64::from(v)));
            let s = welch.psd(&buf)?;
            match &mut acc {
                None => acc = Some(s),
                Some(a) => a.power.iter_mut().zip(&s.power).for_each(|(x, y)| *x += y),
            }
        }
        let mut s = acc.ok_or_else(|| Error::EmptyInput("no trials".into()))?;
        let n = epochs.n_trials() as f64;
        s.power.iter_mut().for_each(|p| *p /= n);
        out.push(s);
    }
    Ok(out)
}
