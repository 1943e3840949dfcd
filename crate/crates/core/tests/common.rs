// Shared fixtures for the property tests.
#![allow(dead_code)]

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vmi_core::eeg::{EpochSet, Montage};

pub fn montage(n: usize) -> Montage {
    Montage::new((0..n).map(|i| format!("C{i}")).collect()).unwrap()
}

pub fn noise_epochs(trials: usize, channels: usize, samples: usize, seed: u64) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn((trials, channels, samples), || {
        Distribution::<f64>::sample(&StandardNormal, &mut rng) as f32
    });
    let labels = (0..trials).map(|i| (i % 4) as u8).collect();
    EpochSet::new(montage(channels), 250, 0.0, labels, data).unwrap()
}

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
