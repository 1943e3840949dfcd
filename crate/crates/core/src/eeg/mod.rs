//! Recordings, montage, trial timeline and epoching.

mod synth;

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub use synth::{synth_dataset, SynthSpec};

/// Sampling rate of the acquisition amplifier.
pub const RAW_FS: u32 = 1000;
/// Sampling rate after decimation by [`DECIMATION`].
pub const ANALYSIS_FS: u32 = 250;
pub const DECIMATION: usize = 4;

/// Number of task classes.
pub const N_CLASSES: usize = 4;

/// The 64-electrode 10/20 layout, in acquisition order.
const STANDARD_64: [&str; 64] = [
    "Fp1", "Fp2", "AF3", "AF4", "AF7", "AF8", "AFz", "F1", "F2", "F3", "F4", "F5", "F6", "F7",
    "F8", "Fz", "FC1", "FC2", "FC3", "FC4", "FC5", "FC6", "FT7", "FT8", "FT9", "FT10", "C1", "C2",
    "C3", "C4", "C5", "C6", "Cz", "T7", "T8", "CP1", "CP2", "CP3", "CP4", "CP5", "CP6", "CPz",
    "TP7", "TP8", "TP9", "TP10", "P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "Pz", "PO3",
    "PO4", "PO7", "PO8", "POz", "O1", "O2", "Oz", "Iz",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Montage {
    names: Vec<String>,
}

impl Montage {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyInput("montage has no channels".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Format(format!("duplicate channel name {n}")));
            }
        }
        Ok(Self { names })
    }

    pub fn standard() -> Self {
        Self {
            names: STANDARD_64.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Resolves a list of names, failing on the first unknown one.
    pub fn indices_of<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .ok_or_else(|| Error::Range(format!("unknown channel {}", n.as_ref())))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Montage> {
        let names = indices
            .iter()
            .map(|&i| {
                self.names
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Range(format!("channel index {i} outside montage of {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Montage::new(names)
    }
}

impl TryFrom<Vec<String>> for Montage {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Montage::new(names)
    }
}

impl From<Montage> for Vec<String> {
    fn from(m: Montage) -> Self {
        m.names
    }
}

/// Phase durations of one trial, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTimeline {
    pub rest1_s: f64,
    pub cue_s: f64,
    pub rest2_s: f64,
    pub imagery_s: f64,
}

impl Default for TrialTimeline {
    fn default() -> Self {
        // Cue length is whatever remains of the 17 s trial.
        Self {
            rest1_s: 2.0,
            cue_s: 5.0,
            rest2_s: 5.0,
            imagery_s: 5.0,
        }
    }
}

impl TrialTimeline {
    pub fn total_s(&self) -> f64 {
        self.rest1_s + self.cue_s + self.rest2_s + self.imagery_s
    }

    /// Offset of imagery onset from the trial start.
    pub fn imagery_onset_s(&self) -> f64 {
        self.rest1_s + self.cue_s + self.rest2_s
    }

    pub fn trial_samples(&self, fs: u32) -> usize {
        secs_to_samples(self.total_s(), fs)
    }

    pub fn imagery_onset_samples(&self, fs: u32) -> usize {
        secs_to_samples(self.imagery_onset_s(), fs)
    }

    /// Admissible window bounds in ms relative to imagery onset.
    pub fn phase_bounds_ms(&self, phase: Phase) -> (f64, f64) {
        match phase {
            Phase::Imagery => (0.0, self.imagery_s * 1000.0),
            Phase::Rest => (-self.rest2_s * 1000.0, 0.0),
            Phase::Trial => (-self.imagery_onset_s() * 1000.0, self.imagery_s * 1000.0),
        }
    }
}

fn secs_to_samples(s: f64, fs: u32) -> usize {
    (s * f64::from(fs)).round() as usize
}

pub(crate) fn ms_to_samples(ms: f64, fs: u32) -> i64 {
    (ms * f64::from(fs) / 1000.0).round() as i64
}

/// The four imagined tasks; the discriminant is the class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Task {
    Phone = 0,
    Door = 1,
    Eat = 2,
    Pour = 3,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Phone, Task::Door, Task::Eat, Task::Pour];

    pub fn from_label(label: u8) -> Option<Task> {
        Task::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Phone => "phone",
            Task::Door => "door",
            Task::Eat => "eat",
            Task::Pour => "pour",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub sample: usize,
    pub label: u8,
}

/// Continuous multichannel EEG in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    montage: Montage,
    fs: u32,
    data: Array2<f32>,
    events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct RecordingHeader {
    fs: u32,
    channel_names: Vec<String>,
    unit: String,
    events: Vec<Event>,
}

fn check_fs(fs: u32) -> Result<()> {
    if fs == RAW_FS || fs == ANALYSIS_FS {
        Ok(())
    } else {
        Err(Error::Range(format!("sampling rate {fs} Hz is neither {RAW_FS} nor {ANALYSIS_FS}")))
    }
}

fn check_label(label: u8) -> Result<()> {
    if (label as usize) < N_CLASSES {
        Ok(())
    } else {
        Err(Error::Range(format!("class label {label} outside 0..{N_CLASSES}")))
    }
}

impl EegRecording {
    pub fn new(montage: Montage, fs: u32, data: Array2<f32>, events: Vec<Event>) -> Result<Self> {
        check_fs(fs)?;
        if data.nrows() != montage.len() {
            return Err(Error::Shape(format!(
                "{} data rows for a {}-channel montage",
                data.nrows(),
                montage.len()
            )));
        }
        for e in &events {
            check_label(e.label)?;
            if e.sample >= data.ncols() {
                return Err(Error::Range(format!(
                    "event at sample {} beyond recording of {} samples",
                    e.sample,
                    data.ncols()
                )));
            }
        }
        Ok(Self {
            montage,
            fs,
            data: data.as_standard_layout().into_owned(),
            events,
        })
    }

    pub fn montage(&self) -> &Montage {
        &self.montage
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    /// channels x samples.
    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_parts(self) -> (Montage, u32, Array2<f32>, Vec<Event>) {
        (self.montage, self.fs, self.data, self.events)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = RecordingHeader {
            fs: self.fs,
            channel_names: self.montage.names.clone(),
            unit: "uV".into(),
            events: self.events.clone(),
        };
        container::encode(&header, self.data.iter().copied())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (RecordingHeader, _) = container::decode(bytes)?;
        if h.unit != "uV" {
            return Err(Error::Format(format!("unsupported unit {:?}", h.unit)));
        }
        let montage = Montage::new(h.channel_names)?;
        let n_ch = montage.len();
        if payload.len() % n_ch != 0 {
            return Err(Error::Corruption(format!(
                "payload of {} values does not hold {n_ch} equal rows",
                payload.len()
            )));
        }
        let n_samples = payload.len() / n_ch;
        let data = Array2::from_shape_vec((n_ch, n_samples), payload)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        EegRecording::new(montage, h.fs, data, h.events).map_err(|e| match e {
            Error::Range(m) | Error::Shape(m) => Error::Corruption(m),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&container::read_file(path.as_ref())?)
    }
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<EegRecording> {
    EegRecording::load(path)
}

pub fn save_recording(rec: &EegRecording, path: impl AsRef<Path>) -> Result<()> {
    rec.save(path)
}

/// Which part of the trial an epoch window refers to. Windows are always
/// given in ms relative to imagery onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// `[0, imagery]`
    Imagery,
    /// The rest phase right before imagery, `[-rest2, 0]`.
    Rest,
    /// Anything inside the trial, `[-(rest1+cue+rest2), imagery]`. Used for
    /// time-frequency maps that straddle the onset.
    Trial,
}

/// Labeled trials x channels x samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    montage: Montage,
    fs: u32,
    t0_ms: f64,
    labels: Vec<u8>,
    trial_ids: Vec<usize>,
    data: Array3<f32>,
}

#[derive(Serialize, Deserialize)]
struct EpochHeader {
    fs: u32,
    t0_ms: f64,
    labels: Vec<u8>,
    dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trial_ids: Option<Vec<usize>>,
}

impl EpochSet {
    pub fn new(montage: Montage, fs: u32, t0_ms: f64, labels: Vec<u8>, data: Array3<f32>) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_trial_ids(montage, fs, t0_ms, labels, ids, data)
    }

    pub fn with_trial_ids(
        montage: Montage,
        fs: u32,
        t0_ms: f64,
        labels: Vec<u8>,
        trial_ids: Vec<usize>,
        data: Array3<f32>,
    ) -> Result<Self> {
        if fs == 0 {
            return Err(Error::Range("sampling rate must be positive".into()));
        }
        let (n, c, _) = data.dim();
        if labels.len() != n || trial_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} labels / {} trial ids for {n} trials",
                labels.len(),
                trial_ids.len()
            )));
        }
        if c != montage.len() {
            return Err(Error::Shape(format!("{c} channels for a {}-channel montage", montage.len())));
        }
        for &l in &labels {
            check_label(l)?;
        }
        Ok(Self {
            montage,
            fs,
            t0_ms,
            labels,
            trial_ids,
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn montage(&self) -> &Montage {
        &self.montage
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    /// Start of every epoch relative to imagery onset.
    pub fn t0_ms(&self) -> f64 {
        self.t0_ms
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Index of the source trial each epoch was cut from.
    pub fn trial_ids(&self) -> &[usize] {
        &self.trial_ids
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn n_trials(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.data.dim().2
    }

    pub fn trial(&self, i: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), i)
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<u8> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn select_trials(&self, idx: &[usize]) -> EpochSet {
        EpochSet {
            montage: self.montage.clone(),
            fs: self.fs,
            t0_ms: self.t0_ms,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            trial_ids: idx.iter().map(|&i| self.trial_ids[i]).collect(),
            data: self.data.select(Axis(0), idx),
        }
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<EpochSet> {
        Ok(EpochSet {
            montage: self.montage.subset(idx)?,
            fs: self.fs,
            t0_ms: self.t0_ms,
            labels: self.labels.clone(),
            trial_ids: self.trial_ids.clone(),
            data: self.data.select(Axis(1), idx),
        })
    }

    /// Restricts every epoch to `[start_ms, end_ms)` relative to imagery onset.
    pub fn crop_ms(&self, start_ms: f64, end_ms: f64) -> Result<EpochSet> {
        let a = ms_to_samples(start_ms - self.t0_ms, self.fs);
        let b = ms_to_samples(end_ms - self.t0_ms, self.fs);
        if a < 0 || b > self.n_samples() as i64 || a >= b {
            return Err(Error::Range(format!(
                "crop [{start_ms}, {end_ms}) ms outside epochs starting at {} ms with {} samples",
                self.t0_ms,
                self.n_samples()
            )));
        }
        Ok(EpochSet {
            montage: self.montage.clone(),
            fs: self.fs,
            t0_ms: self.t0_ms + a as f64 * 1000.0 / f64::from(self.fs),
            labels: self.labels.clone(),
            trial_ids: self.trial_ids.clone(),
            data: self.data.slice(s![.., .., a as usize..b as usize]).to_owned(),
        })
    }

    /// Replaces the labels, keeping everything else.
    pub fn relabel(&self, labels: Vec<u8>) -> Result<EpochSet> {
        EpochSet::with_trial_ids(
            self.montage.clone(),
            self.fs,
            self.t0_ms,
            labels,
            self.trial_ids.clone(),
            self.data.clone(),
        )
    }

    /// Same montage and labels, new sample data (e.g. after filtering).
    pub fn with_data(&self, data: Array3<f32>, fs: u32, t0_ms: f64) -> Result<EpochSet> {
        EpochSet::with_trial_ids(self.montage.clone(), fs, t0_ms, self.labels.clone(), self.trial_ids.clone(), data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, c, t) = self.data.dim();
        let header = EpochHeader {
            fs: self.fs,
            t0_ms: self.t0_ms,
            labels: self.labels.clone(),
            dims: [n, c, t],
            channel_names: Some(self.montage.names.clone()),
            trial_ids: Some(self.trial_ids.clone()),
        };
        container::encode(&header, self.data.iter().copied())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (EpochHeader, _) = container::decode(bytes)?;
        let [n, c, t] = h.dims;
        if payload.len() != n * c * t {
            return Err(Error::Corruption(format!(
                "header dims {n}x{c}x{t} but payload holds {} values",
                payload.len()
            )));
        }
        let montage = match h.channel_names {
            Some(names) => Montage::new(names)?,
            None if c == 64 => Montage::standard(),
            None => Montage::new((0..c).map(|i| format!("ch{i}")).collect())?,
        };
        let data = Array3::from_shape_vec((n, c, t), payload).map_err(|e| Error::Corruption(e.to_string()))?;
        let ids = h.trial_ids.unwrap_or_else(|| (0..n).collect());
        EpochSet::with_trial_ids(montage, h.fs, h.t0_ms, h.labels, ids, data).map_err(|e| match e {
            Error::Shape(m) => Error::Corruption(m),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&container::read_file(path.as_ref())?)
    }
}

/// Cuts one epoch per event. `window_ms` is half-open and relative to imagery
/// onset; it must lie within the bounds of `phase`.
pub fn epoch_recording(rec: &EegRecording, phase: Phase, window_ms: (f64, f64)) -> Result<EpochSet> {
    epoch_recording_with(rec, &TrialTimeline::default(), phase, window_ms)
}

pub fn epoch_recording_with(
    rec: &EegRecording,
    timeline: &TrialTimeline,
    phase: Phase,
    window_ms: (f64, f64),
) -> Result<EpochSet> {
    let (start, end) = window_ms;
    let (lo, hi) = timeline.phase_bounds_ms(phase);
    if !(start < end) || start < lo || end > hi {
        return Err(Error::Range(format!(
            "window [{start}, {end}) ms not inside {phase:?} phase [{lo}, {hi}] ms"
        )));
    }
    if rec.events.is_empty() {
        return Err(Error::EmptyInput("recording has no events".into()));
    }
    let fs = rec.fs;
    let n = ms_to_samples(end - start, fs);
    if n <= 0 {
        return Err(Error::Range(format!("window [{start}, {end}) ms is shorter than one sample")));
    }
    let n = n as usize;
    let onset = timeline.imagery_onset_samples(fs) as i64;
    let offset = ms_to_samples(start, fs);
    let trial_len = timeline.trial_samples(fs);

    let mut out = Array3::<f32>::zeros((rec.events.len(), rec.montage.len(), n));
    for (k, ev) in rec.events.iter().enumerate() {
        if ev.sample + trial_len > rec.n_samples() {
            return Err(Error::Range(format!(
                "trial starting at sample {} does not fit in {} samples",
                ev.sample,
                rec.n_samples()
            )));
        }
        let a = (ev.sample as i64 + onset + offset) as usize;
        out.index_axis_mut(Axis(0), k)
            .assign(&rec.data.slice(s![.., a..a + n]));
    }
    let labels = rec.events.iter().map(|e| e.label).collect();
    EpochSet::new(
        rec.montage.clone(),
        fs,
        offset as f64 * 1000.0 / f64::from(fs),
        labels,
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_recording(fs: u32, n_trials: usize) -> EegRecording {
        let tl = TrialTimeline::default();
        let len = tl.trial_samples(fs) * n_trials;
        let montage = Montage::standard();
        let data = Array2::from_shape_fn((64, len), |(c, t)| (c * 100_000 + t) as f32);
        let events = (0..n_trials)
            .map(|k| Event {
                sample: k * tl.trial_samples(fs),
                label: (k % 4) as u8,
            })
            .collect();
        EegRecording::new(montage, fs, data, events).unwrap()
    }

    #[test]
    fn standard_montage_is_64_unique_labels() {
        let m = Montage::standard();
        assert_eq!(m.len(), 64);
        assert_eq!(m.name(0), "Fp1");
        assert_eq!(m.name(63), "Iz");
        assert_eq!(m.index_of("Oz"), Some(62));
        assert!(Montage::new(vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn timeline_adds_up() {
        let tl = TrialTimeline::default();
        assert_eq!(tl.total_s(), 17.0);
        assert_eq!(tl.imagery_onset_s(), 12.0);
    }

    #[test]
    fn imagery_epochs_have_expected_shape_and_offset() {
        let rec = ramp_recording(250, 8);
        let ep = epoch_recording(&rec, Phase::Imagery, (500.0, 4500.0)).unwrap();
        assert_eq!(ep.data().dim(), (8, 64, 1000));
        assert_eq!(ep.t0_ms(), 500.0);
        // trial 1 starts at 17 s, imagery at +12 s, window at +0.5 s
        let first = 17 * 250 + 12 * 250 + 125;
        assert_eq!(ep.data()[[1, 0, 0]], first as f32);
        assert_eq!(ep.data()[[1, 3, 0]], (300_000 + first) as f32);
        assert_eq!(ep.labels()[..4], [0, 1, 2, 3]);
    }

    #[test]
    fn rest_baseline_epochs() {
        let rec = ramp_recording(250, 2);
        let ep = epoch_recording(&rec, Phase::Rest, (-500.0, 0.0)).unwrap();
        assert_eq!(ep.n_samples(), 125);
        assert_eq!(ep.data()[[0, 0, 124]], (12 * 250 - 1) as f32);
    }

    #[test]
    fn bad_windows_are_range_errors() {
        let rec = ramp_recording(250, 1);
        assert!(matches!(epoch_recording(&rec, Phase::Imagery, (0.0, 0.0)), Err(Error::Range(_))));
        assert!(matches!(epoch_recording(&rec, Phase::Imagery, (0.0, 5004.0)), Err(Error::Range(_))));
        assert!(matches!(epoch_recording(&rec, Phase::Rest, (-500.0, 100.0)), Err(Error::Range(_))));
    }

    #[test]
    fn no_events_is_empty_input() {
        let rec = EegRecording::new(Montage::standard(), 250, Array2::zeros((64, 10)), vec![]).unwrap();
        assert!(matches!(
            epoch_recording(&rec, Phase::Imagery, (0.0, 1000.0)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn truncated_trial_is_range_error() {
        let rec = EegRecording::new(
            Montage::standard(),
            250,
            Array2::zeros((64, 1000)),
            vec![Event { sample: 0, label: 0 }],
        )
        .unwrap();
        assert!(matches!(
            epoch_recording(&rec, Phase::Imagery, (0.0, 1000.0)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn recording_invariants_enforced() {
        let m = Montage::standard();
        assert!(EegRecording::new(m.clone(), 500, Array2::zeros((64, 4)), vec![]).is_err());
        assert!(EegRecording::new(m.clone(), 250, Array2::zeros((63, 4)), vec![]).is_err());
        assert!(EegRecording::new(m, 250, Array2::zeros((64, 4)), vec![Event { sample: 4, label: 0 }]).is_err());
    }

    #[test]
    fn recording_bytes_round_trip() {
        let rec = ramp_recording(250, 1);
        let back = EegRecording::from_bytes(&rec.to_bytes().unwrap()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn missing_row_is_corruption() {
        let rec = EegRecording::new(Montage::standard(), 1000, Array2::zeros((64, 3)), vec![]).unwrap();
        let mut bytes = rec.to_bytes().unwrap();
        // drop one full row plus one value: 64*3 - 4 = 188 values, not divisible by 64
        bytes.truncate(bytes.len() - 4 * 4);
        assert!(matches!(EegRecording::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn crop_and_select() {
        let rec = ramp_recording(250, 4);
        let ep = epoch_recording(&rec, Phase::Imagery, (0.0, 5000.0)).unwrap();
        let c = ep.crop_ms(500.0, 4500.0).unwrap();
        assert_eq!(c.n_samples(), 1000);
        assert_eq!(c.t0_ms(), 500.0);
        assert_eq!(c.data()[[0, 0, 0]], ep.data()[[0, 0, 125]]);
        let sel = ep.select_channels(&[62, 0]).unwrap();
        assert_eq!(sel.montage().names(), ["Oz", "Fp1"]);
        let tr = ep.select_trials(&[3, 1]);
        assert_eq!(tr.labels(), [3, 1]);
        assert_eq!(tr.trial_ids(), [3, 1]);
    }

    #[test]
    fn epoch_file_round_trip() {
        let rec = ramp_recording(250, 2);
        let ep = epoch_recording(&rec, Phase::Imagery, (500.0, 1500.0)).unwrap();
        assert_eq!(EpochSet::from_bytes(&ep.to_bytes().unwrap()).unwrap(), ep);
    }
}
