use super::layers::{AvgPool, BatchNorm};
use super::*;
use crate::eeg::Montage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn trace(n: usize) -> Vec<Vec<usize>> {
    build_model(n).table_shapes().unwrap().into_iter().map(|(_, s)| s).collect()
}

#[test]
fn table_shape_trace() {
    let expected = |n: usize| {
        vec![
            vec![1, 25, n, 376],
            vec![1, 25, 1, 376],
            vec![1, 25, 1, 94],
            vec![1, 50, 1, 80],
            vec![1, 50, 1, 20],
            vec![1, 100, 1, 6],
            vec![1, 100, 1, 1],
            vec![1, 100],
            vec![1, 4],
        ]
    };
    for n in [2, 4, 8, 16, 20, 32, 64] {
        assert_eq!(trace(n), expected(n), "n = {n}");
    }
    let names: Vec<_> = build_model(16).table_shapes().unwrap().into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        ["conv", "conv", "avgpool", "conv", "avgpool", "conv", "avgpool", "flatten", "softmax"]
    );
    match &build_model(2).layers[4] {
        LayerSpec::Conv { kernel, .. } => assert_eq!(*kernel, [2, 1]),
        other => panic!("unexpected layer {other:?}"),
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = build_model(4);
    spec.input_samples = 100;
    assert!(matches!(spec.shapes(), Err(Error::Shape(_))));
    let mut spec = build_model(4);
    spec.layers.pop();
    assert!(spec.shapes().is_err());
}

fn small_spec(dropout: f64) -> ModelSpec {
    use LayerSpec::*;
    let act = Activation { function: spec::Activation::Elu };
    let conv = |maps_out, kernel| Conv { maps_out, kernel, stride: [1, 1], bias: false };
    let pool = AvgPool { kernel: [1, 2], stride: [1, 2] };
    ModelSpec {
        layers: vec![
            conv(3, [1, 5]),
            BatchNorm,
            act.clone(),
            Dropout { rate: dropout },
            conv(4, [2, 1]),
            BatchNorm,
            act.clone(),
            pool.clone(),
            Dropout { rate: dropout },
            conv(4, [1, 5]),
            BatchNorm,
            act.clone(),
            pool.clone(),
            Dropout { rate: dropout },
            Conv { maps_out: 5, kernel: [1, 3], stride: [1, 1], bias: true },
            BatchNorm,
            act,
            pool,
            Flatten,
            Dense { units: 4 },
            Softmax,
        ],
        n_channels: 2,
        input_samples: 40,
        n_classes: 4,
    }
}

fn random_batch<T: Real>(seed: u64, dims: [usize; 4]) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.iter().product::<usize>())
        .map(|_| T::of(StandardNormal.sample(&mut rng)))
        .collect();
    Tensor4::from_vec(dims, data).unwrap()
}

fn loss_at(net: &mut Network<f64>, x: &Tensor4<f64>, y: &[u8], seed: u64) -> f64 {
    net.forward(x.clone(), Mode::Train { seed }).unwrap();
    net.backward(y).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let check = gradient_check(&reduced_model(2, 40, 0.5), seed, 6, 70, 1e-3, 10.0).unwrap();
        assert!(check.max_relative_error < 1e-4, "seed {seed}: {check:?}");
    }
}

#[test]
fn bias_gradients_match_finite_differences() {
    // The same model with a bias on the last convolution, probed exhaustively
    // at a small step.
    let mut net = Network::<f64>::new(&small_spec(0.3), 1).unwrap();
    net.randomize_head(&mut ChaCha8Rng::seed_from_u64(1));
    let x = random_batch::<f64>(101, [6, 1, 2, 40]);
    let y = [0u8, 1, 2, 3, 1, 2];
    net.zero_grad();
    loss_at(&mut net, &x, &y, 7);
    let grads = net.gradients();
    let params = net.parameters();
    let eps = 1e-5;
    for i in 0..params.len() {
        net.set_parameter(i, params[i] + eps).unwrap();
        let up = loss_at(&mut net, &x, &y, 7);
        net.set_parameter(i, params[i] - eps).unwrap();
        let down = loss_at(&mut net, &x, &y, 7);
        net.set_parameter(i, params[i]).unwrap();
        let fd = (up - down) / (2.0 * eps);
        // The conv bias feeding a batch norm has an exactly zero gradient.
        let abs = (fd - grads[i]).abs();
        let rel = abs / fd.abs().max(grads[i].abs()).max(1e-7);
        assert!(rel < 1e-5 || abs < 1e-8, "param {i}: backprop {} vs fd {fd}", grads[i]);
    }
}

#[test]
fn duplicated_batch_gives_same_mean_gradient() {
    let mut net = Network::<f64>::new(&small_spec(0.0), 3).unwrap();
    net.randomize_head(&mut ChaCha8Rng::seed_from_u64(3));
    let x = random_batch::<f64>(4, [4, 1, 2, 40]);
    let y = [0u8, 1, 2, 3];
    net.zero_grad();
    loss_at(&mut net, &x, &y, 0);
    let g1 = net.gradients();
    let mut doubled = x.data().to_vec();
    doubled.extend_from_slice(x.data());
    let x2 = Tensor4::from_vec([8, 1, 2, 40], doubled).unwrap();
    net.zero_grad();
    loss_at(&mut net, &x2, &[0, 1, 2, 3, 0, 1, 2, 3], 0);
    let g2 = net.gradients();
    let diff = g1.iter().zip(&g2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff:e}");
}

#[test]
fn softmax_output_properties() {
    let spec = build_model(2);
    let mut net = Network::<f64>::new(&spec, 1).unwrap();
    let x = random_batch::<f64>(2, [3, 1, 2, 500]);
    let p = net.forward(x.clone(), Mode::Train { seed: 0 }).unwrap();
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
    net.randomize_head(&mut ChaCha8Rng::seed_from_u64(1));
    let e1 = net.forward(x.clone(), Mode::Eval).unwrap();
    let e2 = net.forward(x.clone(), Mode::Eval).unwrap();
    assert_eq!(e1, e2);
    net.zero_head();
    let u = net.forward(x, Mode::Eval).unwrap();
    assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    let bad = random_batch::<f64>(2, [1, 1, 3, 500]);
    assert!(matches!(net.forward(bad, Mode::Eval), Err(Error::Shape(_))));
}

#[test]
fn loss_limits_and_label_range() {
    let mut net = Network::<f64>::new(&small_spec(0.0), 2).unwrap();
    let x = random_batch::<f64>(5, [2, 1, 2, 40]);
    net.forward(x.clone(), Mode::Train { seed: 0 }).unwrap();
    assert!(matches!(net.backward(&[0, 4]), Err(Error::Range(_))));
    // A head biased hard towards the true class drives the loss to zero.
    net.zero_head();
    let n = net.n_parameters();
    let head_bias_start = n - 4;
    net.set_parameter(head_bias_start, 60.0).unwrap();
    let loss = loss_at(&mut net, &x, &[0, 0], 0);
    assert!(loss < 1e-20, "{loss}");
    assert!(net.backward(&[0, 0]).is_err(), "backward needs a fresh forward pass");
}

#[test]
fn batch_norm_standardizes_in_train_mode() {
    let mut bn = BatchNorm::<f64>::new(3);
    let x = random_batch::<f64>(9, [5, 3, 2, 7]);
    let x = Tensor4::from_vec(x.dims(), x.data().iter().map(|v| 4.0 * v + 3.0).collect()).unwrap();
    let y = bn.forward(x, true).unwrap();
    for m in 0..3 {
        let vals: Vec<f64> = (0..5).flat_map(|b| y.sample(b)[m * 14..(m + 1) * 14].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn average_pooling_preserves_mean() {
    let mut pool = AvgPool::new([1, 4], [1, 4]);
    let x = random_batch::<f64>(11, [2, 3, 1, 20]);
    let y = pool.forward(x.clone(), false).unwrap();
    let mx = x.data().iter().sum::<f64>() / x.len() as f64;
    let my = y.data().iter().sum::<f64>() / y.len() as f64;
    assert!((mx - my).abs() < 1e-9);
}

fn epochs(n_trials: usize, channels: usize, samples: usize, seed: u64) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n_trials).map(|i| (i % 4) as u8).collect();
    let data = Array3::from_shape_fn((n_trials, channels, samples), |(t, c, s)| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let f = [3.0, 5.0, 7.0, 9.0][t % 4];
        let sig = if c == 0 { (2.0 * std::f64::consts::PI * f * s as f64 / 250.0).sin() * 2.0 } else { 0.0 };
        (sig + 0.5 * noise) as f32
    });
    let m = Montage::new((0..channels).map(|i| format!("c{i}")).collect()).unwrap();
    EpochSet::new(m, 250, 0.0, labels, data).unwrap()
}

#[test]
fn sliding_windows() {
    let e = epochs(8, 2, 1000, 1);
    let w = slide_windows(&e, 2.0, 0.5).unwrap();
    assert_eq!(w.n_trials(), 24);
    assert_eq!(w.n_samples(), 500);
    assert_eq!(&w.trial_ids()[..6], &[0, 0, 0, 1, 1, 1]);
    assert_eq!(&w.labels()[..4], &[0, 0, 0, 1]);
    assert_eq!(w.data().slice(s![3, .., ..]), e.data().slice(s![1, .., 0..500]));
    assert_eq!(w.data().slice(s![5, .., ..]), e.data().slice(s![1, .., 500..1000]));
    assert_eq!(w.data().slice(s![4, .., ..]), e.data().slice(s![1, .., 250..750]));
    assert!(matches!(slide_windows(&e, 5.0, 0.5), Err(Error::Range(_))));
}

#[test]
fn trial_decisions() {
    assert_eq!(predict_trial(&vec![vec![0.9, 0.1, 0.0, 0.0]; 3]), 0);
    let votes = vec![vec![0.6, 0.4], vec![0.6, 0.4], vec![0.1, 0.9]];
    assert_eq!(predict_trial(&votes), 1);
    assert_eq!(predict_trial(&[vec![0.2, 0.3, 0.5, 0.0]]), 2);
    assert_eq!(predict_trial(&[vec![0.5, 0.5]]), 0);
}

fn tiny_spec(n_channels: usize, samples: usize) -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        layers: vec![
            Conv { maps_out: 4, kernel: [1, 25], stride: [1, 1], bias: false },
            BatchNorm,
            Activation { function: spec::Activation::Elu },
            Conv { maps_out: 4, kernel: [n_channels, 1], stride: [1, 1], bias: false },
            BatchNorm,
            Activation { function: spec::Activation::Elu },
            AvgPool { kernel: [1, 8], stride: [1, 8] },
            Flatten,
            Dense { units: 4 },
            Softmax,
        ],
        n_channels,
        input_samples: samples,
        n_classes: 4,
    }
}

#[test]
fn training_fits_separable_data_deterministically() {
    let e = epochs(64, 2, 200, 3);
    let cfg = TrainConfig { epochs: 20, seed: 5, ..TrainConfig::default() };
    let spec = tiny_spec(2, 200);
    let mut a = Network::<f32>::new(&spec, 1).unwrap();
    let report = train(&mut a, &e, &cfg).unwrap();
    assert_eq!(report.loss_curve.len(), 20);
    let probs = a.predict_proba(&e, 16).unwrap();
    let acc = probs
        .rows()
        .into_iter()
        .zip(e.labels())
        .filter(|(r, &l)| argmax(&r.to_vec()) == l as usize)
        .count() as f64
        / e.n_trials() as f64;
    assert!(acc >= 0.95, "train accuracy {acc}");

    let mut b = Network::<f32>::new(&spec, 1).unwrap();
    train(&mut b, &e, &cfg).unwrap();
    assert_eq!(a.state(), b.state());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let e = epochs(16, 2, 200, 4);
    let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, dropout: 0.0, seed: 1, ..TrainConfig::default() };
    let mut net = Network::<f32>::new(&tiny_spec(2, 200), 2).unwrap();
    let before = net.parameters();
    let report = train(&mut net, &e, &cfg).unwrap();
    assert_eq!(net.parameters(), before);
    let spread = report.loss_curve.iter().fold(0.0f64, |m, &l| m.max((l - report.loss_curve[0]).abs()));
    assert!(spread < 0.05, "{:?}", report.loss_curve);
}

#[test]
fn shuffled_labels_start_near_chance_loss() {
    let e = epochs(48, 2, 500, 6);
    let mut labels = e.labels().to_vec();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let e = e.relabel(labels).unwrap();
    let w = slide_windows(&e, 2.0, 0.5).unwrap();
    for seed in 0..3 {
        let mut net = Network::<f32>::new(&build_model(2), seed).unwrap();
        let cfg = TrainConfig { epochs: 1, seed, ..TrainConfig::default() };
        let report = train(&mut net, &w, &cfg).unwrap();
        assert!((report.loss_curve[0] - 4f64.ln()).abs() < 0.2, "{:?}", report.loss_curve);
    }
}

#[test]
fn checkpoint_round_trip() {
    let spec = build_model(2);
    let mut net = Network::<f32>::new(&spec, 9).unwrap();
    let x = random_batch::<f32>(1, [2, 1, 2, 500]);
    net.forward(x.clone(), Mode::Train { seed: 1 }).unwrap();
    let cfg = TrainConfig::default();
    let bytes = checkpoint_bytes(&net, Some(&cfg)).unwrap();
    let (mut back, got) = load_checkpoint_bytes::<f32>(&bytes).unwrap();
    assert_eq!(got, Some(cfg));
    assert_eq!(back.spec(), net.spec());
    let a = net.forward(x.clone(), Mode::Eval).unwrap();
    let b = back.forward(x, Mode::Eval).unwrap();
    assert!((&a - &b).iter().all(|d| d.abs() < 1e-6));
    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 4);
    assert!(matches!(load_checkpoint_bytes::<f32>(&truncated), Err(Error::Corruption(_))));
}

#[test]
fn config_validation_names_the_key() {
    let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
    match cfg.validate() {
        Err(Error::Config { key, .. }) => assert_eq!(key, "batch_size"),
        other => panic!("{other:?}"),
    }
}
