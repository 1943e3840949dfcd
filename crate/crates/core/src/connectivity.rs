//! Phase-locking-value connectivity and connectivity-driven channel selection.
//!
//! For channels `i`, `j` and one trial, the PLV is the length of the mean unit
//! phasor of the phase difference over the window:
//!
//! ```text
//! PLV_trial(i, j) = | (1/T) sum_t exp(i (phi_i(t) - phi_j(t))) |
//! ```
//!
//! with phases taken from the analytic signal. The reported value is the mean
//! over trials.

use ndarray::Array2;

use crate::csv::{num, CsvWriter};
use crate::dsp::{analytic_signal_with, Complex64, FftPlan};
use crate::eeg::{EpochSet, Montage};
use crate::error::{Error, Result};

/// Symmetric channels x channels PLV, unit diagonal, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    montage: Montage,
    values: Array2<f64>,
}

impl ConnectivityMatrix {
    /// Wraps a precomputed matrix after checking the invariants.
    pub fn new(montage: Montage, values: Array2<f64>) -> Result<Self> {
        let n = montage.len();
        if values.dim() != (n, n) {
            return Err(Error::Shape(format!("{:?} matrix for {n} channels", values.dim())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[[i, j]];
                if !(0.0..=1.0).contains(&v) || (v - values[[j, i]]).abs() > 1e-12 {
                    return Err(Error::Range(format!("entry ({i}, {j}) = {v} violates PLV bounds or symmetry")));
                }
            }
            if values[[i, i]] != 1.0 {
                return Err(Error::Range(format!("diagonal entry {i} is not 1")));
            }
        }
        Ok(Self { montage, values })
    }

    pub fn montage(&self) -> &Montage {
        &self.montage
    }

    pub fn n_channels(&self) -> usize {
        self.montage.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Largest off-diagonal entry in row `i` (0 for a single channel).
    pub fn max_off_diagonal(&self, i: usize) -> f64 {
        (0..self.n_channels())
            .filter(|&j| j != i)
            .map(|j| self.values[[i, j]])
            .fold(0.0, f64::max)
    }

    /// Header row of channel names, then one labelled row per channel.
    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new();
        w.row(std::iter::once("channel".to_string()).chain(self.montage.names().iter().cloned()));
        for (i, name) in self.montage.names().iter().enumerate() {
            w.row(std::iter::once(name.clone()).chain(self.values.row(i).iter().map(|&v| num(v))));
        }
        w.finish()
    }
}

/// Trial-averaged PLV between all channel pairs over the full epoch length.
/// Callers cut the analysis window (500-4500 ms by default) beforehand.
pub fn plv_matrix(epochs: &EpochSet) -> Result<ConnectivityMatrix> {
    let all: Vec<usize> = (0..epochs.n_trials()).collect();
    plv_matrix_of(epochs, &all)
}

fn plv_matrix_of(epochs: &EpochSet, trials: &[usize]) -> Result<ConnectivityMatrix> {
    let (c, t) = (epochs.n_channels(), epochs.n_samples());
    if trials.is_empty() {
        return Err(Error::EmptyInput("PLV needs at least one trial".into()));
    }
    if t < 4 {
        return Err(Error::Range(format!("PLV needs epochs of >= 4 samples, got {t}")));
    }
    let plan = FftPlan::new(t)?;
    let mut re = vec![0.0f64; c * t];
    let mut im = vec![0.0f64; c * t];
    let mut row = Vec::with_capacity(t);
    let mut analytic = Vec::with_capacity(t);
    let mut sum = Array2::<f64>::zeros((c, c));
    let mut s_re = vec![0.0f64; c * c];
    let mut s_im = vec![0.0f64; c * c];

    for &tr in trials {
        let x = epochs.trial(tr);
        for ch in 0..c {
            row.clear();
            row.extend(x.row(ch).iter().map(|&v| f64::from(v)));
            analytic_signal_with(&plan, &row, &mut analytic);
            for (k, z) in analytic.iter().enumerate() {
                let u = unit(*z);
                re[ch * t + k] = u.re;
                im[ch * t + k] = u.im;
            }
        }
        // S = U U^H with U = re + i im:
        //   Re S = re re^T + im im^T,  Im S = im re^T - re im^T
        gram(&re, &re, &mut s_re, c, t, 0.0);
        gram(&im, &im, &mut s_re, c, t, 1.0);
        gram(&im, &re, &mut s_im, c, t, 0.0);
        gram_sub(&re, &im, &mut s_im, c, t);
        let inv_t = 1.0 / t as f64;
        for i in 0..c {
            for j in (i + 1)..c {
                let v = Complex64::new(s_re[i * c + j], s_im[i * c + j]).norm() * inv_t;
                sum[[i, j]] += v;
            }
        }
    }
    let n = trials.len() as f64;
    let mut values = Array2::<f64>::eye(c);
    for i in 0..c {
        for j in (i + 1)..c {
            let v = (sum[[i, j]] / n).clamp(0.0, 1.0);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(ConnectivityMatrix {
        montage: epochs.montage().clone(),
        values,
    })
}

fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// `out = beta * out + a b^T` for row-major `c x t` operands.
fn gram(a: &[f64], b: &[f64], out: &mut [f64], c: usize, t: usize, beta: f64) {
    unsafe {
        matrixmultiply::dgemm(
            c, t, c, 1.0,
            a.as_ptr(), t as isize, 1,
            b.as_ptr(), 1, t as isize,
            beta, out.as_mut_ptr(), c as isize, 1,
        );
    }
}

/// `out -= a b^T`
fn gram_sub(a: &[f64], b: &[f64], out: &mut [f64], c: usize, t: usize) {
    unsafe {
        matrixmultiply::dgemm(
            c, t, c, -1.0,
            a.as_ptr(), t as isize, 1,
            b.as_ptr(), 1, t as isize,
            1.0, out.as_mut_ptr(), c as isize, 1,
        );
    }
}

/// One matrix per class present, in ascending class order.
pub fn plv_by_class(epochs: &EpochSet) -> Result<Vec<(u8, ConnectivityMatrix)>> {
    epochs
        .classes()
        .into_iter()
        .map(|c| {
            let idx: Vec<usize> = (0..epochs.n_trials()).filter(|&i| epochs.labels()[i] == c).collect();
            Ok((c, plv_matrix_of(epochs, &idx)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Upper-triangle entries strictly above `threshold`, strongest first; equal
/// values keep row-major order.
pub fn strong_edges(conn: &ConnectivityMatrix, threshold: f64) -> Vec<Edge> {
    let n = conn.n_channels();
    let mut edges: Vec<Edge> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let value = conn.get(i, j);
            (value > threshold).then_some(Edge { i, j, value })
        })
        .collect();
    edges.sort_by(|a, b| b.value.total_cmp(&a.value));
    edges
}

pub fn edges_to_csv(montage: &Montage, edges: &[Edge]) -> String {
    let mut w = CsvWriter::new();
    w.row(["src", "dst", "plv"]);
    for e in edges {
        w.row([montage.name(e.i).to_string(), montage.name(e.j).to_string(), num(e.value)]);
    }
    w.finish()
}

/// Channels ordered by descending connectivity score.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRanking {
    entries: Vec<(usize, f64)>,
}

impl ChannelRanking {
    /// Sorts `(channel, score)` pairs; equal scores go lower index first.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self, montage: &Montage) -> String {
        let mut w = CsvWriter::new();
        w.row(["rank", "channel", "score"]);
        for (r, &(i, s)) in self.entries.iter().enumerate() {
            w.row([(r + 1).to_string(), montage.name(i).to_string(), num(s)]);
        }
        w.finish()
    }
}

/// Score of a channel: its strongest off-diagonal PLV, averaged over the
/// given (typically per-class) matrices.
pub fn rank_channels(conns: &[ConnectivityMatrix]) -> Result<ChannelRanking> {
    let first = conns
        .first()
        .ok_or_else(|| Error::EmptyInput("no connectivity matrices to rank".into()))?;
    if conns.iter().any(|m| m.montage != first.montage) {
        return Err(Error::Shape("connectivity matrices use different montages".into()));
    }
    let n = first.n_channels();
    let scores: Vec<f64> = (0..n)
        .map(|ch| conns.iter().map(|m| m.max_off_diagonal(ch)).sum::<f64>() / conns.len() as f64)
        .collect();
    Ok(ChannelRanking::from_scores(&scores))
}

/// The top `k` channels of a ranking, as ascending montage indices.
pub fn select_channels(ranking: &ChannelRanking, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > ranking.len() {
        return Err(Error::Range(format!("cannot select {k} of {} channels", ranking.len())));
    }
    let mut sel = ranking.order()[..k].to_vec();
    sel.sort_unstable();
    Ok(sel)
}

/// Per-class PLV on the given epochs, ranking, and top-`k` selection in one go.
pub fn rank_from_epochs(epochs: &EpochSet) -> Result<ChannelRanking> {
    let mats: Vec<ConnectivityMatrix> = plv_by_class(epochs)?.into_iter().map(|(_, m)| m).collect();
    rank_channels(&mats)
}
