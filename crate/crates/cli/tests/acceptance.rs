//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Expected values come from oracles written here (naive DFT, brute-force
//! sign enumeration, closed-form PLV cases), not from the library under test.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vmi_core::connectivity::plv_matrix;
use vmi_core::csp::{class_covariance, csp_fit};
use vmi_core::dsp::{ersp_channels, fft, ErspConfig};
use vmi_core::eeg::{EpochSet, Montage, SynthSpec};
use vmi_core::harness::EvalReport;
use vmi_core::neural::{build_model, gradient_check, reduced_model, Mode, Network, Tensor4};
use vmi_core::stats::{permutation_test, permutation_test_with, PermutationScheme};

// Tolerances and budgets, fixed here.
const SHAPE_BUDGET: Duration = Duration::from_secs(1);
const GRAD_TOL: f64 = 1e-4;
const GRAD_MIN_PROBES: usize = 200;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const PLV_COPY_TOL: f64 = 1e-9;
const PLV_OFFSET_TOL: f64 = 1e-6;
const PLV_NOISE_MAX: f64 = 0.1;
const PLV_SCALE_TOL: f64 = 1e-9;
const FFT_TOL: f64 = 1e-9;
const PARSEVAL_TOL: f64 = 1e-9;
const MC_TOL: f64 = 0.02;
const KS_MAX: f64 = 0.05;
const WHITEN_TOL: f64 = 1e-8;
const CNN_MIN: f64 = 90.0;
const CSP_MIN: f64 = 60.0;
const CHANCE: f64 = 25.0;
const CHANCE_BAND: f64 = 10.0;
const RECOVERY_MIN: f64 = 0.9;
const DEMO_BUDGET: Duration = Duration::from_secs(600);
const ERSP_POST_MIN_DB: f64 = 3.0;
const ERSP_PRE_MAX_DB: f64 = 1.0;
const ERSP_TIMES: usize = 400;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c1_table_shapes() -> Check {
    let start = Instant::now();
    for n in [2, 4, 8, 16, 20, 32, 64] {
        let expected: Vec<(&str, Vec<usize>)> = vec![
            ("conv", vec![1, 25, n, 376]),
            ("conv", vec![1, 25, 1, 376]),
            ("avgpool", vec![1, 25, 1, 94]),
            ("conv", vec![1, 50, 1, 80]),
            ("avgpool", vec![1, 50, 1, 20]),
            ("conv", vec![1, 100, 1, 6]),
            ("avgpool", vec![1, 100, 1, 1]),
            ("flatten", vec![1, 100]),
            ("softmax", vec![1, 4]),
        ];
        let spec = build_model(n);
        let got = spec.table_shapes().map_err(|e| e.to_string())?;
        if got != expected {
            return Err(format!("n={n}: {got:?}"));
        }
        let mut net = Network::<f32>::new(&spec, 0).map_err(|e| e.to_string())?;
        let x = Tensor4::zeros([1, 1, n, 500]);
        let p = net.forward(x, Mode::Eval).map_err(|e| e.to_string())?;
        if p.dim() != (1, 4) {
            return Err(format!("n={n}: forward output {:?}", p.dim()));
        }
    }
    let t = start.elapsed();
    ensure(t < SHAPE_BUDGET, format!("7 channel counts match, {:.3} s", t.as_secs_f64()))
}

fn c2_gradients() -> Check {
    let start = Instant::now();
    let spec = reduced_model(2, 40, 0.5);
    let mut worst = 0.0f64;
    let mut probes = 0;
    for seed in [1, 2, 3] {
        let g = gradient_check(&spec, seed, 6, 70, 1e-3, 10.0).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_relative_error);
        probes += g.probes;
    }
    let t = start.elapsed();
    ensure(
        worst < GRAD_TOL && probes >= GRAD_MIN_PROBES && t < GRAD_BUDGET,
        format!("max rel err {worst:.2e} over {probes} probes, 3 seeds, {:.1} s", t.as_secs_f64()),
    )
}

fn epochs_from(trials: &[Vec<Vec<f64>>]) -> EpochSet {
    let (n, c, t) = (trials.len(), trials[0].len(), trials[0][0].len());
    let data = Array3::from_shape_fn((n, c, t), |(a, b, k)| trials[a][b][k] as f32);
    let m = Montage::new((0..c).map(|i| format!("c{i}")).collect()).unwrap();
    EpochSet::new(m, 250, 0.0, vec![0; n], data).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    (0..t).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn c3_plv() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 1000;
    // 10 Hz over 4 s at 250 Hz: an integer number of cycles, so the analytic
    // signal of each tone is exact.
    let tone = |phase: f64, amp: f64| -> Vec<f64> {
        (0..t).map(|k| amp * (2.0 * PI * 10.0 * k as f64 / 250.0 + phase).cos()).collect()
    };
    let mut trials = Vec::new();
    for _ in 0..50 {
        let base = noise(&mut rng, t);
        let phase = rng.random_range(0.0..2.0 * PI);
        let scaled: Vec<f64> = base.iter().map(|v| 4.5 * v).collect();
        trials.push(vec![
            base.clone(),
            base,
            tone(phase, 1.0),
            tone(phase + 0.8, 2.0),
            noise(&mut rng, t),
            noise(&mut rng, t),
            scaled,
        ]);
    }
    let m = plv_matrix(&epochs_from(&trials)).map_err(|e| e.to_string())?;
    let copy = (m.get(0, 1) - 1.0).abs();
    let offset = (m.get(2, 3) - 1.0).abs();
    let indep = m.get(4, 5);
    // Channel 6 is channel 0 times 4.5: all its PLVs must equal channel 0's.
    let scale = (0..6).filter(|&j| j != 0).map(|j| (m.get(6, j) - m.get(0, j)).abs()).fold(0.0, f64::max);
    ensure(
        copy < PLV_COPY_TOL && offset < PLV_OFFSET_TOL && indep < PLV_NOISE_MAX && scale < PLV_SCALE_TOL,
        format!("copy |1-plv| {copy:.1e}, offset {offset:.1e}, independent {indep:.3}, scaling {scale:.1e}"),
    )
}

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn c4_fft() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rand_c = |n: usize| -> Vec<Complex64> {
        (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    };
    let mut dft_err = 0.0f64;
    for n in 1..=64 {
        let x = rand_c(n);
        let got = fft(&x).map_err(|e| e.to_string())?;
        let want = naive_dft(&x);
        dft_err = dft_err.max(got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
    }
    let mut parseval = 0.0f64;
    let mut lens = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..1000 {
        let n = lens.random_range(1..=1024);
        let x = rand_c(n);
        let y = fft(&x).map_err(|e| e.to_string())?;
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        parseval = parseval.max((time - freq).abs() / time);
    }
    ensure(
        dft_err < FFT_TOL && parseval < PARSEVAL_TOL,
        format!("max |fft - dft| {dft_err:.1e} (n <= 64), max Parseval rel err {parseval:.1e} (1000 inputs)"),
    )
}

fn t_stat(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
    }
    mean / (var / n).sqrt()
}

/// Brute-force enumeration of all sign patterns.
fn oracle_p(d: &[f64]) -> f64 {
    let obs = t_stat(d).abs();
    let total = 1usize << d.len();
    let hits = (0..total)
        .filter(|mask| {
            let flipped: Vec<f64> = d.iter().enumerate().map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v }).collect();
            let t = t_stat(&flipped).abs();
            if obs.is_infinite() {
                t.is_infinite()
            } else {
                t >= obs * (1.0 - 1e-12)
            }
        })
        .count();
    hits as f64 / total as f64
}

fn c5_permutation() -> Check {
    // Planted case: four identical positive differences. Only the all-plus
    // and all-minus patterns reach the observed |t|: 2 / 2^4.
    let closed_form = 2.0 / 16.0;
    let planted = permutation_test(&[1.5; 4], &[0.5; 4], 10_000, 1).map_err(|e| e.to_string())?;
    let brute = oracle_p(&[1.0; 4]);
    if planted != closed_form || brute != closed_form {
        return Err(format!("n=4 planted p = {planted}, oracle {brute}, closed form {closed_form}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mc_gap = 0.0f64;
    for n in 2..=12 {
        let shift = 0.5;
        let a: Vec<f64> = (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) + shift).collect();
        let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let exact = oracle_p(&d);
        let mut r = ChaCha8Rng::seed_from_u64(50 + n as u64);
        let ex = permutation_test_with(&a, &b, 10_000, &mut r, PermutationScheme::Exhaustive).map_err(|e| e.to_string())?;
        let mc = permutation_test_with(&a, &b, 10_000, &mut r, PermutationScheme::MonteCarlo).map_err(|e| e.to_string())?;
        if (ex - exact).abs() > 1e-12 {
            return Err(format!("n={n}: exhaustive {ex} vs oracle {exact}"));
        }
        mc_gap = mc_gap.max((mc - exact).abs());
    }
    let mut ps = Vec::with_capacity(1000);
    for run in 0..1000u64 {
        let a: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        ps.push(permutation_test(&a, &b, 2000, run).map_err(|e| e.to_string())?);
    }
    ps.sort_by(|x, y| x.total_cmp(y));
    let n = ps.len() as f64;
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / n - p).abs().max((p - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    ensure(
        mc_gap < MC_TOL && ks < KS_MAX,
        format!("n=4 p = {planted}; max |MC - exact| {mc_gap:.4} (n 2..12); null KS {ks:.4} (1000 runs)"),
    )
}

fn csp_classes(seed: u64) -> (EpochSet, EpochSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |hot: usize, label: u8| {
        let data = Array3::from_shape_fn((30, 8, 250), |(_, c, _)| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (if c == hot { 3.0 * v } else { v }) as f32
        });
        let m = Montage::new((0..8).map(|i| format!("c{i}")).collect()).unwrap();
        EpochSet::new(m, 250, 0.0, vec![label; 30], data).unwrap()
    };
    (make(2, 0), make(5, 1))
}

fn argmax_abs(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best })
}

fn c6_csp() -> Check {
    let mut recovered = 0;
    let mut whiten = 0.0f64;
    for seed in 0..10 {
        let (a, b) = csp_classes(seed);
        let model = csp_fit(&a, &b, 1).map_err(|e| e.to_string())?;
        let composite = class_covariance(&a).map_err(|e| e.to_string())? + class_covariance(&b).map_err(|e| e.to_string())?;
        let w = model.all_filters();
        let id = w * composite * w.transpose();
        whiten = whiten.max((id - DMatrix::identity(8, 8)).abs().max());
        let last = model.n_features() - 1;
        if argmax_abs(&model.filter(0)) == 2 && argmax_abs(&model.filter(last)) == 5 {
            recovered += 1;
        }
    }
    ensure(
        whiten < WHITEN_TOL && recovered == 10,
        format!("max |W C Wt - I| {whiten:.1e}; planted channels recovered in {recovered}/10 seeds"),
    )
}

fn vmi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vmi"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

struct Demo {
    dir: tempfile::TempDir,
    elapsed: Duration,
    reports: Vec<EvalReport>,
}

fn run_demo() -> Result<Demo, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = vmi()
        .arg("--config")
        .arg(config("demo.json"))
        .arg("--out")
        .arg(dir.path())
        .arg("report")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!("demo run failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let text = std::fs::read_to_string(dir.path().join("reports.json")).map_err(|e| e.to_string())?;
    let reports = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(Demo { dir, elapsed, reports })
}

fn find<'a>(demo: &'a Demo, dataset: &str, method: &str, k: usize) -> Result<&'a EvalReport, String> {
    demo.reports
        .iter()
        .find(|r| r.dataset == dataset && r.method.label() == method && r.k_channels == k)
        .ok_or_else(|| format!("no {dataset} {method} {k}ch report"))
}

fn c7_decode(demo: &Result<Demo, String>) -> Check {
    let demo = demo.as_ref().map_err(|e| e.clone())?;
    let cnn = find(demo, "demo", "CNN", 16)?.mean;
    let csp = find(demo, "demo", "CSP-LDA", 16)?.mean;
    let shuffled: Vec<f64> = ["CNN", "CSP-LDA"]
        .iter()
        .map(|m| find(demo, "demo-shuffled", m, 16).map(|r| r.mean))
        .collect::<Result<_, _>>()?;
    let chance_ok = shuffled.iter().all(|m| (m - CHANCE).abs() <= CHANCE_BAND);

    // Top-k with k = size of the planted set, fit on training folds only; one
    // recovery rate per repeat (5 partition seeds).
    let planted: Vec<String> = {
        let spec = SynthSpec::demo(0);
        let m = Montage::standard();
        spec.planted_union(&m).unwrap().iter().map(|&i| m.name(i).to_string()).collect()
    };
    let sel = find(demo, "demo", "CSP-LDA", planted.len())?;
    let per_repeat: Vec<f64> = sel
        .selected_channels
        .chunks(sel.folds)
        .map(|folds| {
            let hits: usize = folds.iter().map(|s| s.iter().filter(|c| planted.contains(c)).count()).sum();
            hits as f64 / (folds.len() * planted.len()) as f64
        })
        .collect();
    let worst = per_repeat.iter().copied().fold(1.0, f64::min);
    ensure(
        cnn >= CNN_MIN
            && csp >= CSP_MIN
            && chance_ok
            && per_repeat.len() == 5
            && worst >= RECOVERY_MIN
            && demo.elapsed <= DEMO_BUDGET,
        format!(
            "CNN {cnn:.2}%, CSP-LDA {csp:.2}% (k=16); shuffled {:.2}% / {:.2}%; top-{} recovery min {:.0}% over {} seeds; {:.0} s",
            shuffled[0],
            shuffled[1],
            planted.len(),
            100.0 * worst,
            per_repeat.len(),
            demo.elapsed.as_secs_f64()
        ),
    )
}

fn is_cell(s: &str) -> bool {
    // "<digits>.<2 digits>% (±<digits>.<2 digits>)"
    let Some(rest) = s.strip_suffix(')') else { return false };
    let Some((mean, std)) = rest.split_once("% (±") else { return false };
    let num = |x: &str| {
        x.split_once('.')
            .is_some_and(|(i, f)| !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit()) && f.len() == 2 && f.bytes().all(|b| b.is_ascii_digit()))
    };
    num(mean) && num(std)
}

fn c8_sweep(demo: &Result<Demo, String>) -> Check {
    let demo = demo.as_ref().map_err(|e| e.clone())?;
    let csv = std::fs::read_to_string(demo.dir.path().join("sweep.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if header != "dataset,method,2ch,4ch,8ch,16ch,20ch,32ch,64ch" {
        return Err(format!("header {header:?}"));
    }
    let mut full_rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 || !cells[2..].iter().all(|c| c.is_empty() || is_cell(c)) {
            return Err(format!("bad row {line:?}"));
        }
        if cells[2..].iter().all(|c| is_cell(c)) {
            full_rows += 1;
        }
    }
    let mut detail = Vec::new();
    for method in ["CSP-LDA", "CNN"] {
        let k2 = find(demo, "demo", method, 2)?.mean;
        let k16 = find(demo, "demo", method, 16)?.mean;
        if k16 < k2 {
            return Err(format!("{method}: k=16 {k16:.2}% < k=2 {k2:.2}%"));
        }
        detail.push(format!("{method} k=2 {k2:.2}% <= k=16 {k16:.2}%"));
    }
    ensure(full_rows >= 1, format!("7 columns, {full_rows} complete row(s); {}", detail.join(", ")))
}

fn c9_ersp() -> Check {
    let fs = 250.0;
    let n = 1625; // -1500 .. 5000 ms
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 50;
    let mut data = Array3::<f32>::zeros((trials, 1, n));
    for tr in 0..trials {
        let phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..n {
            let ms = -1500.0 + t as f64 * 1000.0 / fs;
            let mut v: f64 = StandardNormal.sample(&mut rng);
            if ms >= 500.0 {
                v += 2.0 * (2.0 * PI * 10.0 * t as f64 / fs + phase).sin();
            }
            data[[tr, 0, t]] = v as f32;
        }
    }
    let ep = EpochSet::new(Montage::new(vec!["O1".into()]).unwrap(), 250, -1500.0, vec![0; trials], data).unwrap();
    let cfg = ErspConfig::default();
    let map = &ersp_channels(&ep, &[0], &cfg).map_err(|e| e.to_string())?[0];
    let post = map.block_mean(8.0, 12.0, 500.0, f64::INFINITY).ok_or("empty post-onset block")?;
    let pre = map.block_mean(cfg.f_range.0, cfg.f_range.1, f64::NEG_INFINITY, 0.0).ok_or("empty pre-onset block")?;
    let times = map.times_ms.len();
    let rows_ok = map.values.iter().all(|r| r.len() == ERSP_TIMES);
    ensure(
        post > ERSP_POST_MIN_DB && pre.abs() < ERSP_PRE_MAX_DB && times == ERSP_TIMES && rows_ok,
        format!("post-onset 8-12 Hz {post:.2} dB, pre-onset {pre:.3} dB, {times} time points"),
    )
}

fn c10_determinism() -> Check {
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = vmi()
            .arg("--config")
            .arg(config("smoke.json"))
            .arg("--seed")
            .arg("11")
            .arg("--out")
            .arg(dir.path())
            .arg("report")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        manifests.push(std::fs::read(dir.path().join("manifest.json")).map_err(|e| e.to_string())?);
    }
    ensure(
        manifests[0] == manifests[1],
        format!("two report runs: manifests byte-identical = {}, {} bytes", manifests[0] == manifests[1], manifests[0].len()),
    )
}

fn main() {
    // Writes bypass test output capture so the lines always show.
    let mut stdout = std::io::stdout();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, check: Check| {
        let (tag, detail) = match check {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(stdout, "criterion {id:>2} [{tag}] {name}: {detail}");
        let _ = stdout.flush();
    };
    report(1, "network shape trace", c1_table_shapes());
    report(2, "gradient check", c2_gradients());
    report(3, "PLV oracles", c3_plv());
    report(4, "FFT oracles", c4_fft());
    report(5, "permutation test oracles", c5_permutation());
    report(6, "CSP oracles", c6_csp());
    let demo = run_demo();
    report(7, "end-to-end synthetic decode", c7_decode(&demo));
    report(8, "channel sweep report", c8_sweep(&demo));
    report(9, "ERSP burst", c9_ersp());
    report(10, "CLI determinism", c10_determinism());
    let _ = writeln!(std::io::stdout(), "acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
