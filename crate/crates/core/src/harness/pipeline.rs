//! Config-driven runs: data, preprocessing, connectivity, statistics, ERSP
//! and the channel sweep, with every artifact hashed into `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sweep_cells, sweep_csv, shuffle_labels, thread_pool, Cell, CvConfig, EvalReport, Method, CHANNEL_COUNTS};
use crate::connectivity::{edges_to_csv, plv_by_class, rank_channels, strong_edges};
use crate::dsp::{epochs_psd, ersp_channels, preprocess, spectra_to_csv, ErspConfig, BAND_HZ};
use crate::eeg::{epoch_recording, load_recording, synth_dataset, EegRecording, EpochSet, Phase, SynthSpec, ANALYSIS_FS};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::{stat_map, DEFAULT_PERMUTATIONS};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// The built-in four-class synthetic dataset.
    Demo,
    Synth(SynthSpec),
    /// An EEGB recording at the raw or the analysis rate.
    Recording { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Demo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub band_hz: (f64, f64),
    /// Target rate after decimation.
    pub fs: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { band_hz: BAND_HZ, fs: ANALYSIS_FS }
    }
}

/// Epoch windows in ms relative to imagery onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochWindows {
    pub imagery_ms: (f64, f64),
    pub rest_ms: (f64, f64),
}

impl Default for EpochWindows {
    fn default() -> Self {
        Self { imagery_ms: (500.0, 4500.0), rest_ms: (-4500.0, -500.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectivityConfig {
    pub edge_threshold: f64,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self { edge_threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub band_hz: (f64, f64),
    pub permutations: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { band_hz: BAND_HZ, permutations: DEFAULT_PERMUTATIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErspSection {
    pub channels: Vec<String>,
    /// Epoch straddling the onset, ms relative to imagery onset.
    pub epoch_ms: (f64, f64),
    pub stft: ErspConfig,
}

impl Default for ErspSection {
    fn default() -> Self {
        Self {
            channels: vec!["Fp1".into(), "O1".into()],
            epoch_ms: (-1500.0, 5000.0),
            stft: ErspConfig::default(),
        }
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub method: Method,
    #[serde(default = "all_counts")]
    pub channel_counts: Vec<usize>,
    /// Overrides `cv.repeats` for this row.
    #[serde(default)]
    pub repeats: Option<usize>,
}

fn all_counts() -> Vec<usize> {
    CHANNEL_COUNTS.to_vec()
}

/// Label-shuffled runs at one channel count, reported as a separate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuffleControl {
    pub k: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rows: Vec<SweepRow>,
    pub shuffled_control: Option<ShuffleControl>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rows: [Method::CspLda, Method::Cnn]
                .into_iter()
                .map(|method| SweepRow { method, channel_counts: all_counts(), repeats: None })
                .collect(),
            shuffled_control: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub epochs: EpochWindows,
    #[serde(default)]
    pub connectivity: ConnectivityConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub ersp: ErspSection,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_name() -> String {
    "demo".into()
}

/// Maps a serde error to a config error naming the offending key.
pub fn config_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    let key = ["missing field `", "unknown field `", "unknown variant `"]
        .iter()
        .find_map(|p| {
            let start = msg.find(p)? + p.len();
            let len = msg[start..].find('`')?;
            Some(msg[start..start + len].to_string())
        })
        .unwrap_or_else(|| "config".into());
    Error::config(key, msg)
}

/// Parses a JSON document into `T`, reporting schema violations as config
/// errors.
pub fn parse_config<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| config_error(&e))
}

impl PipelineConfig {
    /// Parses a config; `seed` fills in a missing top-level seed.
    pub fn from_json(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_error(&e))?;
        if let (Some(s), Some(obj)) = (seed, value.as_object_mut()) {
            obj.insert("seed".into(), s.into());
        }
        if value.pointer("/data/synth/seed").is_some() {
            return Err(Error::config("seed", "data.synth.seed is derived from the top-level seed"));
        }
        let cfg: Self = parse_config(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, seed: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        Self::from_json(&text, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.cv.validate()?;
        if self.sweep.rows.iter().any(|r| r.channel_counts.is_empty() || r.channel_counts.contains(&0)) {
            return Err(Error::config("channel_counts", "must be non-empty and positive"));
        }
        if self.sweep.rows.iter().any(|r| r.repeats == Some(0)) {
            return Err(Error::config("repeats", "must be >= 1"));
        }
        if self.stats.permutations == 0 {
            return Err(Error::config("permutations", "must be >= 1"));
        }
        if let Some(c) = &self.sweep.shuffled_control {
            if c.k == 0 || c.methods.is_empty() || c.repeats == Some(0) {
                return Err(Error::config("shuffled_control", "needs k >= 1, methods and repeats >= 1"));
            }
        }
        Ok(())
    }

    /// Seeds handed to each stage, all derived from `seed`.
    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        let root = SeedStream::new(self.seed);
        ["synth", "stats", "cv", "label-shuffle"]
            .into_iter()
            .map(|s| (s.to_string(), root.seed(s, 0)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    fn of(path: String, bytes: &[u8]) -> Self {
        Self { path, sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 }
    }
}

/// Inputs, artifacts and seeds of one run. Contains nothing time- or
/// host-dependent, so equal runs give byte-identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub artifacts: Vec<FileEntry>,
}

/// Writes files under an output directory and records their hashes.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    inputs: BTreeMap<String, FileEntry>,
    files: BTreeMap<String, FileEntry>,
}

impl Artifacts {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.clone(), e))?;
        Ok(Self { dir, inputs: BTreeMap::new(), files: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
        self.files.insert(name.to_string(), FileEntry::of(name.to_string(), bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Hashes an input file; it is listed under the name given.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let name = path.to_string_lossy().into_owned();
        self.inputs.insert(name.clone(), FileEntry::of(name, &bytes));
        Ok(())
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(self, command: &str, seed: u64, seeds: BTreeMap<String, u64>, config: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            tool: "vmi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            seeds,
            config,
            inputs: self.inputs.into_values().collect(),
            artifacts: self.files.into_values().collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        Ok(manifest)
    }
}

/// The recording named by the config, before preprocessing.
pub fn load_data(cfg: &PipelineConfig) -> Result<EegRecording> {
    let synth_seed = cfg.stage_seeds()["synth"];
    match &cfg.data {
        DataSource::Demo => synth_dataset(&SynthSpec::demo(synth_seed)),
        DataSource::Synth(spec) => synth_dataset(&SynthSpec { seed: synth_seed, ..spec.clone() }),
        DataSource::Recording { path } => load_recording(path),
    }
}

/// Band-pass and decimation to `cfg.fs`.
pub fn prepare(rec: &EegRecording, cfg: &PreprocessConfig) -> Result<EegRecording> {
    if cfg.fs == 0 || rec.fs() % cfg.fs != 0 {
        return Err(Error::config("fs", format!("{} Hz cannot be decimated to {} Hz", rec.fs(), cfg.fs)));
    }
    preprocess(rec, cfg.band_hz, (rec.fs() / cfg.fs) as usize)
}

/// Preprocessed imagery and rest epochs.
pub fn analysis_epochs(rec: &EegRecording, cfg: &EpochWindows) -> Result<(EpochSet, EpochSet)> {
    Ok((
        epoch_recording(rec, Phase::Imagery, cfg.imagery_ms)?,
        epoch_recording(rec, Phase::Rest, cfg.rest_ms)?,
    ))
}

/// Sweep rows and the optional shuffled control, as evaluated reports.
pub fn run_sweep(cfg: &PipelineConfig, imagery: &EpochSet) -> Result<Vec<EvalReport>> {
    let seeds = cfg.stage_seeds();
    let cell = |method, k, repeats: Option<usize>| Cell {
        method,
        k,
        config: CvConfig { repeats: repeats.unwrap_or(cfg.cv.repeats), ..cfg.cv.clone() },
    };
    let cells: Vec<Cell> = cfg
        .sweep
        .rows
        .iter()
        .flat_map(|r| r.channel_counts.iter().map(move |&k| cell(r.method, k, r.repeats)))
        .collect();
    let mut reports = sweep_cells(&cfg.name, imagery, &cells, seeds["cv"])?;
    if let Some(c) = &cfg.sweep.shuffled_control {
        let shuffled = shuffle_labels(imagery, seeds["label-shuffle"])?;
        let cells: Vec<Cell> = c.methods.iter().map(|&m| cell(m, c.k, c.repeats)).collect();
        reports.extend(sweep_cells(&format!("{}-shuffled", cfg.name), &shuffled, &cells, seeds["cv"])?);
    }
    Ok(reports)
}

/// Runs every stage and writes artifacts plus `manifest.json` into `out`.
/// `progress` receives one line per finished stage.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out: impl AsRef<Path>,
    threads: usize,
    progress: &mut (dyn FnMut(&str) + Send),
) -> Result<Manifest> {
    cfg.validate()?;
    let pool = thread_pool(threads)?;
    let out = out.as_ref();
    pool.install(|| run_stages(cfg, out, progress))
}

fn run_stages(cfg: &PipelineConfig, out: &Path, progress: &mut (dyn FnMut(&str) + Send)) -> Result<Manifest> {
    let seeds = cfg.stage_seeds();
    let mut art = Artifacts::new(out)?;
    if let DataSource::Recording { path } = &cfg.data {
        art.add_input(path)?;
    }
    let raw = load_data(cfg)?;
    progress(&format!("data: {} channels, {} events at {} Hz", raw.montage().len(), raw.events().len(), raw.fs()));
    let rec = prepare(&raw, &cfg.preprocess)?;
    drop(raw);
    let (imagery, rest) = analysis_epochs(&rec, &cfg.epochs)?;
    progress(&format!("preprocess: {} trials, {} samples per epoch", imagery.n_trials(), imagery.n_samples()));

    let names = imagery.montage().names().to_vec();
    art.write("psd_imagery.csv", spectra_to_csv(&names, &epochs_psd(&imagery)?)?.as_bytes())?;
    art.write("psd_rest.csv", spectra_to_csv(&names, &epochs_psd(&rest)?)?.as_bytes())?;
    progress("psd");

    let per_class = plv_by_class(&imagery)?;
    for (c, m) in &per_class {
        art.write(&format!("plv_class{c}.csv"), m.to_csv().as_bytes())?;
        let edges = strong_edges(m, cfg.connectivity.edge_threshold);
        art.write(&format!("edges_class{c}.csv"), edges_to_csv(imagery.montage(), &edges).as_bytes())?;
    }
    let mats: Vec<_> = per_class.into_iter().map(|(_, m)| m).collect();
    art.write("channel_ranking.csv", rank_channels(&mats)?.to_csv(imagery.montage()).as_bytes())?;
    progress("connectivity");

    let map = stat_map(&imagery, &rest, cfg.stats.band_hz, cfg.stats.permutations, seeds["stats"])?;
    art.write("stats.csv", map.to_csv().as_bytes())?;
    progress(&format!("stats: {} significant channels", map.significant_channels().len()));

    let trial = epoch_recording(&rec, Phase::Trial, cfg.ersp.epoch_ms)?;
    let channels = trial.montage().indices_of(&cfg.ersp.channels)?;
    for map in ersp_channels(&trial, &channels, &cfg.ersp.stft)? {
        art.write(&format!("ersp_{}.csv", map.channel), map.to_csv().as_bytes())?;
    }
    drop(trial);
    progress("ersp");

    let reports = run_sweep(cfg, &imagery)?;
    art.write("sweep.csv", sweep_csv(&reports).as_bytes())?;
    art.write_json("reports.json", &reports)?;
    progress("sweep");

    let config = serde_json::to_value(cfg)?;
    art.finish("pipeline", cfg.seed, seeds, config)
}
