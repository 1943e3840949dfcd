mod common;

use ndarray::Axis;
use proptest::prelude::*;
use vmi_core::connectivity::{plv_matrix, select_channels, ChannelRanking};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn plv_is_a_bounded_symmetric_matrix(trials in 1usize..6, channels in 2usize..7, samples in 8usize..200, seed in any::<u64>()) {
        let plv = plv_matrix(&common::noise_epochs(trials, channels, samples, seed)).unwrap();
        for i in 0..channels {
            prop_assert_eq!(plv.get(i, i), 1.0);
            for j in 0..channels {
                let v = plv.get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, plv.get(j, i));
            }
        }
    }

    #[test]
    fn plv_ignores_amplitude_scaling(exp in proptest::collection::vec(-6i32..6, 4), seed in any::<u64>()) {
        // Powers of two keep the f32 samples exact, so only the phase path is exercised.
        let data = common::noise_epochs(4, 4, 250, seed);
        let mut scaled = data.data().clone();
        for (c, e) in exp.iter().enumerate() {
            scaled.index_axis_mut(Axis(1), c).mapv_inplace(|v| v * 2f32.powi(*e));
        }
        let scaled = data.with_data(scaled, data.fs(), data.t0_ms()).unwrap();
        let (a, b) = (plv_matrix(&data).unwrap(), plv_matrix(&scaled).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn plv_ignores_trial_order(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), seed in any::<u64>()) {
        let data = common::noise_epochs(8, 5, 120, seed);
        let (a, b) = (plv_matrix(&data).unwrap(), plv_matrix(&data.select_trials(&perm)).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn selections_are_nested(scores in proptest::collection::vec(0.0f64..1.0, 1..64), k1 in 1usize..64, k2 in 1usize..64) {
        let r = ChannelRanking::from_scores(&scores);
        let (k1, k2) = (k1.min(k2).min(scores.len()), k1.max(k2).min(scores.len()));
        let small = select_channels(&r, k1).unwrap();
        let large = select_channels(&r, k2).unwrap();
        prop_assert!(small.iter().all(|c| large.contains(c)));
        let ranked: Vec<f64> = r.entries().iter().map(|e| e.1).collect();
        prop_assert!(ranked.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn noiseless_fully_coupled_pairs_lock_phase() {
    use vmi_core::eeg::{epoch_recording, synth_dataset, Phase, SynthSpec};

    let spec = SynthSpec {
        n_trials_per_class: 2,
        coupling: 1.0,
        snr_db: f64::INFINITY,
        ..SynthSpec::demo(5)
    };
    let rec = synth_dataset(&spec).unwrap();
    let epochs = epoch_recording(&rec, Phase::Imagery, (500.0, 4500.0)).unwrap();
    for (class, planted) in spec.planted_channels.iter().enumerate() {
        let idx: Vec<usize> = (0..epochs.n_trials()).filter(|&i| epochs.labels()[i] as usize == class).collect();
        let plv = plv_matrix(&epochs.select_trials(&idx)).unwrap();
        let ch = rec.montage().indices_of(planted).unwrap();
        for &i in &ch {
            for &j in &ch {
                assert!((plv.get(i, j) - 1.0).abs() <= 1e-9, "class {class}: plv({i}, {j}) = {}", plv.get(i, j));
            }
        }
    }
}
