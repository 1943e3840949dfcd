//! `vmi`: command-line front end for the decoding pipeline.
//!
//! Every subcommand resolves one pipeline config (from `--config`, with
//! `--seed` filling in or overriding the seed), writes its artifacts under
//! `--out`, and finishes with a `manifest.json`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use vmi_core::connectivity::{edges_to_csv, plv_by_class, rank_channels, select_channels, strong_edges};
use vmi_core::csp::CspLda;
use vmi_core::dsp::{epochs_psd, ersp_channels, spectra_to_csv};
use vmi_core::eeg::{epoch_recording, EegRecording, EpochSet, Phase};
use vmi_core::harness::pipeline::{analysis_epochs, load_data, prepare, run_sweep, DataSource};
use vmi_core::harness::{cross_validate, make_windows, run_pipeline, sweep_csv, thread_pool, Artifacts, Method, PipelineConfig};
use vmi_core::neural::{build_model_with, checkpoint_bytes, train, ModelSpec, Network, TrainConfig};
use vmi_core::rng::SeedStream;
use vmi_core::stats::stat_map;
use vmi_core::Result;

#[derive(Parser, Debug)]
#[command(name = "vmi", version, about = "Offline visual motion imagery EEG decoding")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Input {
    /// Recording to use instead of the config's data source.
    #[arg(long)]
    recording: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EpochInput {
    #[command(flatten)]
    input: Input,
    /// Imagery epochs written by `preprocess`; skips loading and preprocessing.
    #[arg(long)]
    epochs: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured synthetic recording.
    Synth,
    /// Band-pass, decimate and epoch into imagery and rest sets.
    Preprocess(Input),
    /// Per-class PLV matrices, strong edges and the channel ranking.
    Connect(EpochInput),
    /// Top-k channels by PLV ranking.
    Select {
        #[command(flatten)]
        input: EpochInput,
        #[arg(long, short)]
        k: usize,
    },
    /// Imagery-vs-rest band-power t-map with permutation p-values.
    Stats(Input),
    /// Time-frequency maps for the configured channels.
    Ersp(Input),
    /// Welch PSD of imagery epochs.
    Psd(EpochInput),
    /// Cross-validate the CNN at k channels, then fit it on all trials.
    TrainCnn {
        #[command(flatten)]
        input: EpochInput,
        #[arg(long, short, default_value_t = 16)]
        k: usize,
    },
    /// Cross-validate CSP-LDA at k channels, then fit it on all trials.
    TrainCsp {
        #[command(flatten)]
        input: EpochInput,
        #[arg(long, short, default_value_t = 16)]
        k: usize,
    },
    /// The configured channel-count sweep.
    Sweep(EpochInput),
    /// The full pipeline: every stage above plus the sweep.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(path) => PipelineConfig::load(path, cli.seed),
        None => PipelineConfig::from_json("{}", cli.seed),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    let input = match &cli.command {
        Command::Preprocess(i) | Command::Stats(i) | Command::Ersp(i) => Some(i.clone()),
        Command::Connect(e) | Command::Psd(e) | Command::Sweep(e) => Some(e.input.clone()),
        Command::Select { input, .. } | Command::TrainCnn { input, .. } | Command::TrainCsp { input, .. } => {
            Some(input.input.clone())
        }
        Command::Synth | Command::Report => None,
    };
    if let Some(path) = input.and_then(|i| i.recording) {
        cfg.data = DataSource::Recording { path };
    }
    let pool = thread_pool(cli.threads)?;
    let start = Instant::now();
    let mut progress = move |msg: &str| eprintln!("[{:>7.1}s] {msg}", start.elapsed().as_secs_f64());
    pool.install(|| dispatch(&cli, &cfg, &mut progress))
}

fn recording(cfg: &PipelineConfig, art: &mut Artifacts) -> Result<EegRecording> {
    if let DataSource::Recording { path } = &cfg.data {
        art.add_input(path)?;
    }
    prepare(&load_data(cfg)?, &cfg.preprocess)
}

fn imagery(cfg: &PipelineConfig, input: &EpochInput, art: &mut Artifacts) -> Result<EpochSet> {
    match &input.epochs {
        Some(path) => {
            art.add_input(path)?;
            EpochSet::load(path)
        }
        None => Ok(analysis_epochs(&recording(cfg, art)?, &cfg.epochs)?.0),
    }
}

fn finish(art: Artifacts, name: &str, cfg: &PipelineConfig) -> Result<()> {
    let manifest = art.finish(name, cfg.seed, cfg.stage_seeds(), serde_json::to_value(cfg)?)?;
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, a.path);
    }
    Ok(())
}

/// Cross-validation at `k`, then a final model on all trials.
fn train_method(cfg: &PipelineConfig, data: &EpochSet, method: Method, k: usize, art: &mut Artifacts) -> Result<()> {
    let seeds = cfg.stage_seeds();
    let k = k.min(data.n_channels());
    let report = cross_validate(&cfg.name, data, method, k, &cfg.cv, seeds["cv"])?;
    eprintln!("{} k={k}: {}", method.label(), report.cell());
    let tag = match method {
        Method::Cnn => "cnn",
        Method::CspLda => "csp",
    };
    art.write_json(&format!("report_{tag}_{k}ch.json"), &report)?;

    let channels = if k < data.n_channels() {
        select_channels(&vmi_core::connectivity::rank_from_epochs(data)?, k)?
    } else {
        (0..data.n_channels()).collect()
    };
    let names: Vec<&str> = channels.iter().map(|&c| data.montage().name(c)).collect();
    let data = data.select_channels(&channels)?;
    art.write(&format!("channels_{tag}_{k}ch.txt"), format!("{}\n", names.join("\n")).as_bytes())?;
    let bytes = match method {
        Method::CspLda => CspLda::fit(&data, cfg.cv.csp_pairs.min(k / 2).max(1))?.to_bytes()?,
        Method::Cnn => {
            let windows = make_windows(&data, &cfg.cv.window)?;
            let spec = build_model_with(k, cfg.cv.train.dropout, cfg.cv.activation);
            let spec = ModelSpec { input_samples: windows.n_samples(), ..spec };
            let streams = SeedStream::new(seeds["cv"]).child("final", 0);
            let mut net = Network::<f32>::new(&spec, streams.seed("cnn-init", 0))?;
            let tc = TrainConfig { seed: streams.seed("cnn-train", 0), ..cfg.cv.train.clone() };
            let log = train(&mut net, &windows, &tc)?;
            art.write_json(&format!("train_{tag}_{k}ch.json"), &log)?;
            checkpoint_bytes(&net, Some(&tc))?
        }
    };
    art.write(&format!("model_{tag}_{k}ch.eegb"), &bytes)
}

fn dispatch(cli: &Cli, cfg: &PipelineConfig, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
    let out: &Path = &cli.out;
    let mut art = Artifacts::new(out)?;
    let name = match &cli.command {
        Command::Synth => {
            let rec = load_data(cfg)?;
            art.write("recording.eegb", &rec.to_bytes()?)?;
            "synth"
        }
        Command::Preprocess(_) => {
            let rec = recording(cfg, &mut art)?;
            let (imagery, rest) = analysis_epochs(&rec, &cfg.epochs)?;
            art.write("recording_preprocessed.eegb", &rec.to_bytes()?)?;
            art.write("epochs_imagery.eegb", &imagery.to_bytes()?)?;
            art.write("epochs_rest.eegb", &rest.to_bytes()?)?;
            "preprocess"
        }
        Command::Connect(input) => {
            let data = imagery(cfg, input, &mut art)?;
            let per_class = plv_by_class(&data)?;
            for (c, m) in &per_class {
                art.write(&format!("plv_class{c}.csv"), m.to_csv().as_bytes())?;
                let edges = strong_edges(m, cfg.connectivity.edge_threshold);
                art.write(&format!("edges_class{c}.csv"), edges_to_csv(data.montage(), &edges).as_bytes())?;
            }
            let mats: Vec<_> = per_class.into_iter().map(|(_, m)| m).collect();
            art.write("channel_ranking.csv", rank_channels(&mats)?.to_csv(data.montage()).as_bytes())?;
            "connect"
        }
        Command::Select { input, k } => {
            let data = imagery(cfg, input, &mut art)?;
            let ranking = vmi_core::connectivity::rank_from_epochs(&data)?;
            let sel = select_channels(&ranking, *k)?;
            let names: Vec<&str> = sel.iter().map(|&c| data.montage().name(c)).collect();
            art.write("channel_ranking.csv", ranking.to_csv(data.montage()).as_bytes())?;
            art.write(&format!("selected_{k}ch.txt"), format!("{}\n", names.join("\n")).as_bytes())?;
            "select"
        }
        Command::Stats(_) => {
            let rec = recording(cfg, &mut art)?;
            let (imagery, rest) = analysis_epochs(&rec, &cfg.epochs)?;
            let map = stat_map(&imagery, &rest, cfg.stats.band_hz, cfg.stats.permutations, cfg.stage_seeds()["stats"])?;
            art.write("stats.csv", map.to_csv().as_bytes())?;
            "stats"
        }
        Command::Ersp(_) => {
            let rec = recording(cfg, &mut art)?;
            let trial = epoch_recording(&rec, Phase::Trial, cfg.ersp.epoch_ms)?;
            let channels = trial.montage().indices_of(&cfg.ersp.channels)?;
            for map in ersp_channels(&trial, &channels, &cfg.ersp.stft)? {
                art.write(&format!("ersp_{}.csv", map.channel), map.to_csv().as_bytes())?;
            }
            "ersp"
        }
        Command::Psd(input) => {
            let data = imagery(cfg, input, &mut art)?;
            let names = data.montage().names().to_vec();
            art.write("psd_imagery.csv", spectra_to_csv(&names, &epochs_psd(&data)?)?.as_bytes())?;
            "psd"
        }
        Command::TrainCnn { input, k } => {
            let data = imagery(cfg, input, &mut art)?;
            train_method(cfg, &data, Method::Cnn, *k, &mut art)?;
            "train-cnn"
        }
        Command::TrainCsp { input, k } => {
            let data = imagery(cfg, input, &mut art)?;
            train_method(cfg, &data, Method::CspLda, *k, &mut art)?;
            "train-csp"
        }
        Command::Sweep(input) => {
            let data = imagery(cfg, input, &mut art)?;
            let reports = run_sweep(cfg, &data)?;
            art.write("sweep.csv", sweep_csv(&reports).as_bytes())?;
            art.write_json("reports.json", &reports)?;
            "sweep"
        }
        Command::Report => {
            drop(art);
            let manifest = run_pipeline(cfg, out, cli.threads, progress)?;
            for a in &manifest.artifacts {
                println!("{}  {}", a.sha256, a.path);
            }
            return Ok(());
        }
    };
    progress(name);
    finish(art, name, cfg)
}
