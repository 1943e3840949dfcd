//! Stratified cross-validation, channel-count sweeps and reports, plus the
//! config-driven pipeline in [`pipeline`].

pub mod pipeline;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{rank_from_epochs, select_channels, ChannelRanking};
use crate::csp::{argmax, CspLda, DEFAULT_PAIRS};
use crate::eeg::{EpochSet, N_CLASSES};
use crate::error::{Error, Result};
use crate::neural::{build_model_with, slide_windows, train, Activation, ModelSpec, Network, TrainConfig};
use crate::rng::SeedStream;

pub use pipeline::{run_pipeline, Artifacts, Manifest, PipelineConfig};

/// Channel counts of the standard sweep.
pub const CHANNEL_COUNTS: [usize; 7] = [2, 4, 8, 16, 20, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cnn,
    CspLda,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Cnn => "CNN",
            Method::CspLda => "CSP-LDA",
        }
    }
}

/// How trials are windowed for the CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length_s: f64,
    pub overlap: f64,
    /// Off: one window per trial, taken from the start of the epoch.
    pub augment: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length_s: 2.0, overlap: 0.5, augment: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    /// Number of repetitions with different fold partitions and model seeds.
    pub repeats: usize,
    pub window: WindowConfig,
    pub csp_pairs: usize,
    pub activation: Activation,
    /// The CNN training settings; `seed` is ignored, each fold derives its own.
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 5,
            window: WindowConfig::default(),
            csp_pairs: DEFAULT_PAIRS,
            activation: Activation::Elu,
            train: TrainConfig::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds", "must be >= 2"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be >= 1"));
        }
        if !(self.window.length_s > 0.0) {
            return Err(Error::config("length_s", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.window.overlap) {
            return Err(Error::config("overlap", "must be in [0, 1)"));
        }
        if self.csp_pairs == 0 {
            return Err(Error::config("csp_pairs", "must be >= 1"));
        }
        self.train.validate()
    }
}

/// Fold index of every trial. Each class is shuffled with `seed` and dealt
/// round-robin, so fold sizes per class differ by at most one.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Range(format!("{folds} folds")));
    }
    let mut rng = SeedStream::new(seed).rng("folds", 0);
    let mut assignment = vec![0; labels.len()];
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < folds {
            return Err(Error::Stratification(format!(
                "class {c} has {} trials for {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    Ok(assignment)
}

/// `(train, test)` trial indices per fold.
pub fn fold_splits(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let assignment = stratified_folds(labels, folds, seed)?;
    let all: Vec<u8> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            for &c in &all {
                if !test.iter().any(|&i| labels[i] == c) || !train.iter().any(|&i| labels[i] == c) {
                    return Err(Error::Stratification(format!("class {c} absent from fold {f}")));
                }
            }
            Ok((train, test))
        })
        .collect()
}

/// Training/evaluation windows for the CNN.
pub fn make_windows(epochs: &EpochSet, cfg: &WindowConfig) -> Result<EpochSet> {
    let overlap = if cfg.augment { cfg.overlap } else { 0.0 };
    let windows = slide_windows(epochs, cfg.length_s, overlap)?;
    if cfg.augment {
        return Ok(windows);
    }
    let per_trial = windows.n_trials() / epochs.n_trials().max(1);
    let first: Vec<usize> = (0..epochs.n_trials()).map(|t| t * per_trial).collect();
    Ok(windows.select_trials(&first))
}

/// One fold of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    /// Source-trial ids of the test fold.
    pub test_trials: Vec<usize>,
    /// Montage indices used, ascending.
    pub channels: Vec<usize>,
    /// `(true, predicted)` per test trial.
    pub predictions: Vec<(u8, u8)>,
    /// Trial-level accuracy in percent.
    pub accuracy: f64,
    /// Window-level accuracy in percent, CNN only.
    pub window_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: Method,
    pub k_channels: usize,
    pub folds: usize,
    pub repeats: usize,
    /// Trial-level accuracy per fold in percent, repeat-major.
    pub fold_accuracies: Vec<f64>,
    /// Mean of `fold_accuracies`.
    pub mean: f64,
    /// Sample std over all folds of all repeats.
    pub std: f64,
    /// Mean accuracy of each repeat.
    pub repeat_means: Vec<f64>,
    /// Sample std of `repeat_means`.
    pub std_across_repeats: f64,
    pub window_accuracy_mean: Option<f64>,
    /// Confusion matrix per repeat, rows = true class, columns = predicted.
    pub confusion: Vec<[[usize; N_CLASSES]; N_CLASSES]>,
    /// Channel names used in each fold, repeat-major.
    pub selected_channels: Vec<Vec<String>>,
    pub root_seed: u64,
    pub config: CvConfig,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Sample std; zero for fewer than two values.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Table cell, e.g. `67.50% (±1.52)`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}% (±{std:.2})")
}

impl EvalReport {
    pub fn cell(&self) -> String {
        format_cell(self.mean, self.std)
    }

    /// Folds of one repeat, in fold order.
    pub fn repeat_folds(&self, repeat: usize) -> &[f64] {
        &self.fold_accuracies[repeat * self.folds..(repeat + 1) * self.folds]
    }
}

/// One `(repeat, fold)` split with the channel ranking fit on its training
/// trials. Plans are shared by every sweep cell with the same root seed.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `None` when no cell needs selection.
    pub ranking: Option<ChannelRanking>,
    streams: SeedStream,
}

/// Splits for `repeats` repetitions. Repeat `r` draws its partition and model
/// seeds from the child stream `("repeat", r)` of `seed`, so a plan with more
/// repeats extends one with fewer.
pub fn plan_folds(data: &EpochSet, folds: usize, repeats: usize, seed: u64, rank: bool) -> Result<Vec<FoldPlan>> {
    let root = SeedStream::new(seed);
    let mut plans = Vec::new();
    for r in 0..repeats {
        let rs = root.child("repeat", r as u64);
        for (f, (train, test)) in fold_splits(data.labels(), folds, rs.seed("partition", 0))?
            .into_iter()
            .enumerate()
        {
            plans.push(FoldPlan { repeat: r, fold: f, train, test, ranking: None, streams: rs.child("fold", f as u64) });
        }
    }
    if rank {
        plans.par_iter_mut().try_for_each(|p| -> Result<()> {
            p.ranking = Some(rank_from_epochs(&data.select_trials(&p.train))?);
            Ok(())
        })?;
    }
    Ok(plans)
}

fn run_fold(data: &EpochSet, method: Method, k: usize, cfg: &CvConfig, plan: &FoldPlan) -> Result<FoldResult> {
    let train_set = data.select_trials(&plan.train);
    let test_set = data.select_trials(&plan.test);
    let channels: Vec<usize> = if k >= data.n_channels() {
        (0..data.n_channels()).collect()
    } else {
        let ranking = match &plan.ranking {
            Some(r) => r.clone(),
            None => rank_from_epochs(&train_set)?,
        };
        select_channels(&ranking, k)?
    };
    let train_set = train_set.select_channels(&channels)?;
    let test_set = test_set.select_channels(&channels)?;
    let truth = test_set.labels().to_vec();
    let (pred, window_accuracy) = match method {
        Method::CspLda => {
            let model = CspLda::fit(&train_set, cfg.csp_pairs.min(channels.len() / 2).max(1))?;
            (model.predict(&test_set)?, None)
        }
        Method::Cnn => {
            let train_w = make_windows(&train_set, &cfg.window)?;
            let test_w = make_windows(&test_set, &cfg.window)?;
            let spec = build_model_with(channels.len(), cfg.train.dropout, cfg.activation);
            let spec = ModelSpec { input_samples: train_w.n_samples(), ..spec };
            let mut net = Network::<f32>::new(&spec, plan.streams.seed("cnn-init", 0))?;
            let tc = TrainConfig { seed: plan.streams.seed("cnn-train", 0), ..cfg.train.clone() };
            train(&mut net, &train_w, &tc)?;
            let probs = net.predict_proba(&test_w, 64)?;
            let hits = (0..test_w.n_trials())
                .filter(|&i| argmax(&probs.row(i).to_vec()) == test_w.labels()[i] as usize)
                .count();
            let window_acc = 100.0 * hits as f64 / test_w.n_trials() as f64;
            let mut pred = vec![0u8; test_set.n_trials()];
            for (id, p) in net.predict_trials(&test_w, 64)? {
                let pos = test_set.trial_ids().iter().position(|&t| t == id).expect("window of a test trial");
                pred[pos] = p;
            }
            (pred, Some(window_acc))
        }
    };
    let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
    Ok(FoldResult {
        repeat: plan.repeat,
        fold: plan.fold,
        test_trials: test_set.trial_ids().to_vec(),
        channels,
        accuracy: 100.0 * hits as f64 / truth.len() as f64,
        predictions: truth.into_iter().zip(pred).collect(),
        window_accuracy,
    })
}

/// Runs the first `cfg.repeats` repetitions of `plans` on the current rayon
/// pool.
pub fn cross_validate_planned(
    data: &EpochSet,
    method: Method,
    k: usize,
    cfg: &CvConfig,
    plans: &[FoldPlan],
) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    check_k(data, k)?;
    plans
        .par_iter()
        .filter(|p| p.repeat < cfg.repeats)
        .map(|p| run_fold(data, method, k, cfg, p))
        .collect()
}

fn check_k(data: &EpochSet, k: usize) -> Result<()> {
    if k == 0 || k > data.n_channels() {
        return Err(Error::Range(format!("cannot use {k} of {} channels", data.n_channels())));
    }
    Ok(())
}

/// `folds x repeats` jobs; channel selection is refit on the training folds
/// of every job.
pub fn cross_validate_folds(
    data: &EpochSet,
    method: Method,
    k: usize,
    cfg: &CvConfig,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    check_k(data, k)?;
    let plans = plan_folds(data, cfg.folds, cfg.repeats, seed, k < data.n_channels())?;
    cross_validate_planned(data, method, k, cfg, &plans)
}

/// Assembles a report from the fold results of one cell.
pub fn assemble_report(
    dataset: &str,
    data: &EpochSet,
    method: Method,
    k: usize,
    cfg: &CvConfig,
    seed: u64,
    results: &[FoldResult],
) -> EvalReport {
    let fold_accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let repeat_means: Vec<f64> = fold_accuracies.chunks(cfg.folds).map(mean).collect();
    let mut confusion = vec![[[0usize; N_CLASSES]; N_CLASSES]; cfg.repeats];
    for r in results {
        for &(t, p) in &r.predictions {
            confusion[r.repeat][t as usize][p as usize] += 1;
        }
    }
    let windows: Vec<f64> = results.iter().filter_map(|r| r.window_accuracy).collect();
    EvalReport {
        dataset: dataset.to_string(),
        method,
        k_channels: k,
        folds: cfg.folds,
        repeats: cfg.repeats,
        mean: mean(&fold_accuracies),
        std: sample_std(&fold_accuracies),
        std_across_repeats: sample_std(&repeat_means),
        repeat_means,
        fold_accuracies,
        window_accuracy_mean: (!windows.is_empty()).then(|| mean(&windows)),
        confusion,
        selected_channels: results
            .iter()
            .map(|r| r.channels.iter().map(|&c| data.montage().name(c).to_string()).collect())
            .collect(),
        root_seed: seed,
        config: cfg.clone(),
    }
}

/// Stratified cross-validation of one method at one channel count.
pub fn cross_validate(
    dataset: &str,
    data: &EpochSet,
    method: Method,
    k: usize,
    cfg: &CvConfig,
    seed: u64,
) -> Result<EvalReport> {
    let results = cross_validate_folds(data, method, k, cfg, seed)?;
    Ok(assemble_report(dataset, data, method, k, cfg, seed, &results))
}

/// One cell of a sweep. Channel counts above the montage size are clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub k: usize,
    pub config: CvConfig,
}

/// Evaluates arbitrary cells on one dataset. Fold plans (and their channel
/// rankings) are computed once; every fold of every cell is then an
/// independent job. All cells must agree on the fold count.
pub fn sweep_cells(dataset: &str, data: &EpochSet, cells: &[Cell], seed: u64) -> Result<Vec<EvalReport>> {
    let Some(first) = cells.first() else {
        return Ok(Vec::new());
    };
    let folds = first.config.folds;
    if cells.iter().any(|c| c.config.folds != folds) {
        return Err(Error::config("folds", "all sweep cells must use the same fold count"));
    }
    for c in cells {
        c.config.validate()?;
        check_k(data, c.k.min(data.n_channels()))?;
    }
    let repeats = cells.iter().map(|c| c.config.repeats).max().unwrap_or(1);
    let rank = cells.iter().any(|c| c.k < data.n_channels());
    let plans = plan_folds(data, folds, repeats, seed, rank)?;
    let jobs: Vec<(usize, &FoldPlan)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| plans.iter().filter(move |p| p.repeat < c.config.repeats).map(move |p| (i, p)))
        .collect();
    let results: Vec<(usize, FoldResult)> = jobs
        .into_par_iter()
        .map(|(i, p)| {
            let c = &cells[i];
            run_fold(data, c.method, c.k.min(data.n_channels()), &c.config, p).map(|r| (i, r))
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mine: Vec<FoldResult> = results.iter().filter(|(j, _)| *j == i).map(|(_, r)| r.clone()).collect();
            assemble_report(dataset, data, c.method, c.k.min(data.n_channels()), &c.config, seed, &mine)
        })
        .collect())
}

/// The full `methods x counts` grid with one configuration, method-major.
pub fn sweep(
    dataset: &str,
    data: &EpochSet,
    methods: &[Method],
    counts: &[usize],
    cfg: &CvConfig,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let cells: Vec<Cell> = methods
        .iter()
        .flat_map(|&method| counts.iter().map(move |&k| Cell { method, k, config: cfg.clone() }))
        .collect();
    sweep_cells(dataset, data, &cells, seed)
}

/// Rows = `dataset,method`, one column per channel count, `mean% (±std)`
/// cells; missing cells are left empty.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut counts: Vec<usize> = reports.iter().map(|r| r.k_channels).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut rows: Vec<(&str, Method)> = Vec::new();
    for r in reports {
        if !rows.contains(&(r.dataset.as_str(), r.method)) {
            rows.push((r.dataset.as_str(), r.method));
        }
    }
    let mut out = String::from("dataset,method");
    for k in &counts {
        out.push_str(&format!(",{k}ch"));
    }
    out.push('\n');
    for (ds, m) in rows {
        out.push_str(&format!("{ds},{}", m.label()));
        for &k in &counts {
            let cell = reports
                .iter()
                .find(|r| r.dataset == ds && r.method == m && r.k_channels == k)
                .map(EvalReport::cell)
                .unwrap_or_default();
            out.push_str(&format!(",{cell}"));
        }
        out.push('\n');
    }
    out
}

/// The same trials with labels permuted by the `("label-shuffle", 0)` stream.
pub fn shuffle_labels(data: &EpochSet, seed: u64) -> Result<EpochSet> {
    let mut labels = data.labels().to_vec();
    labels.shuffle(&mut SeedStream::new(seed).rng("label-shuffle", 0));
    data.relabel(labels)
}

/// A rayon pool with `threads` workers, or the global default for 0.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}
