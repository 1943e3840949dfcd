//! Offline decoding pipeline for visual motion imagery EEG.
//!
//! The crate is organised bottom-up:
//!
//! ```text
//! eeg           recordings, montage, trial timeline, epoching, EEGB files, synthetic data
//! dsp           FFT, analytic signal, Butterworth filtfilt, decimation, Welch PSD, ERSP
//! connectivity  trial-averaged PLV, strong edges, channel ranking and selection
//! stats         band power, paired t, sign-flip permutation test, imagery-vs-rest maps
//! csp           CSP spatial filters, shrinkage LDA, one-vs-rest CSP-LDA
//! neural        tensor engine and the compact temporal/spatial CNN
//! harness       cross-validation, channel sweeps, reports, config-driven pipelines
//! ```
//!
//! Every stochastic step takes its randomness from a [`rng::SeedStream`], so a
//! run is fully determined by its root seed.

pub mod connectivity;
pub mod csp;
pub mod dsp;
pub mod eeg;
pub mod error;
pub mod harness;
pub mod neural;
pub mod rng;
pub mod stats;

mod container;
mod csv;

pub use error::{Error, Result};
