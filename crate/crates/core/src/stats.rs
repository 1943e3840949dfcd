//! Imagery-versus-rest statistics: band power, paired t and a sign-flip
//! permutation test.

use ndarray::Array2;
use rand::Rng as _;

use crate::csv::{num, CsvWriter};
use crate::dsp::Welch;
use crate::eeg::EpochSet;
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

/// Significance level for the per-channel maps.
pub const ALPHA: f64 = 0.01;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Band power per trial and channel: the Welch PSD (1 s Hann segments, 50%
/// overlap) integrated over `band_hz`.
pub fn band_power(epochs: &EpochSet, band_hz: (f64, f64)) -> Result<Array2<f64>> {
    let fs = f64::from(epochs.fs());
    let (lo, hi) = band_hz;
    if !(lo >= 0.0 && lo < hi && hi <= fs / 2.0) {
        return Err(Error::Range(format!("band [{lo}, {hi}] Hz outside [0, {}] Hz", fs / 2.0)));
    }
    let seg = (epochs.fs() as usize).min(epochs.n_samples());
    let mut welch = Welch::new(fs, seg, 0.5)?;
    let mut out = Array2::zeros((epochs.n_trials(), epochs.n_channels()));
    let mut buf = Vec::with_capacity(epochs.n_samples());
    for tr in 0..epochs.n_trials() {
        let x = epochs.trial(tr);
        for ch in 0..epochs.n_channels() {
            buf.clear();
            buf.extend(x.row(ch).iter().map(|&v| f64::from(v)));
            out[[tr, ch]] = welch.psd(&buf)?.band_power(lo, hi);
        }
    }
    Ok(out)
}

/// Paired t statistic of `a - b`.
///
/// Zero-variance differences give `0` when every difference is zero and
/// `+-inf` (sign of the mean) otherwise.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = differences(a, b)?;
    let sum: f64 = d.iter().sum();
    let sumsq: f64 = d.iter().map(|v| v * v).sum();
    Ok(t_from_sums(sum, sumsq, d.len()))
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Range(format!("paired test needs n >= 2, got {}", a.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// t from the sum and sum of squares of the differences; the sum of squares
/// is invariant under sign flips, which keeps each permutation O(n).
fn t_from_sums(sum: f64, sumsq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = sum / nf;
    let ss = sumsq - nf * mean * mean;
    if ss <= 1e-12 * sumsq || sumsq == 0.0 {
        return if mean == 0.0 || sumsq == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(mean)
        };
    }
    let sd = (ss / (nf - 1.0)).sqrt();
    mean / (sd / nf.sqrt())
}

fn at_least_as_extreme(t: f64, observed: f64) -> bool {
    let (t, o) = (t.abs(), observed.abs());
    if o.is_infinite() {
        t.is_infinite()
    } else {
        t >= o * (1.0 - 1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationScheme {
    /// Exhaustive when `2^n <= n_perm`, Monte Carlo otherwise.
    Auto,
    Exhaustive,
    MonteCarlo,
}

/// Two-sided sign-flip permutation p-value for paired samples.
pub fn permutation_test(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    let mut rng = SeedStream::new(seed).rng("permutation", 0);
    permutation_test_with(a, b, n_perm, &mut rng, PermutationScheme::Auto)
}

/// Exhaustive p is the fraction of all `2^n` sign patterns (identity
/// included) with `|t|` at least the observed one. Monte Carlo p is
/// `(1 + B) / (1 + n_perm)` over `n_perm` random sign patterns.
pub fn permutation_test_with(
    a: &[f64],
    b: &[f64],
    n_perm: usize,
    rng: &mut Rng,
    scheme: PermutationScheme,
) -> Result<f64> {
    let d = differences(a, b)?;
    if n_perm == 0 {
        return Err(Error::Range("n_perm must be >= 1".into()));
    }
    let n = d.len();
    let sumsq: f64 = d.iter().map(|v| v * v).sum();
    let observed = t_from_sums(d.iter().sum(), sumsq, n);
    let exhaustive = match scheme {
        PermutationScheme::Exhaustive => true,
        PermutationScheme::MonteCarlo => false,
        PermutationScheme::Auto => n < 63 && (1u64 << n) <= n_perm as u64,
    };
    if exhaustive {
        if n >= 31 {
            return Err(Error::Range(format!("exhaustive enumeration of 2^{n} sign patterns")));
        }
        let total = 1u64 << n;
        let mut hits = 0u64;
        for mask in 0..total {
            let s: f64 = d
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v })
                .sum();
            if at_least_as_extreme(t_from_sums(s, sumsq, n), observed) {
                hits += 1;
            }
        }
        return Ok(hits as f64 / total as f64);
    }
    let mut hits = 0usize;
    for _ in 0..n_perm {
        let mut s = 0.0;
        let mut bits = 0u64;
        for (i, &v) in d.iter().enumerate() {
            if i % 64 == 0 {
                bits = rng.random();
            }
            s += if bits >> (i % 64) & 1 == 1 { -v } else { v };
        }
        if at_least_as_extreme(t_from_sums(s, sumsq, n), observed) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

/// Per-channel imagery-vs-rest statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    pub channel_names: Vec<String>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub significant: Vec<bool>,
}

impl StatMap {
    pub fn significant_channels(&self) -> Vec<usize> {
        (0..self.significant.len()).filter(|&i| self.significant[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new();
        w.row(["channel", "t", "p", "significant"]);
        for i in 0..self.channel_names.len() {
            w.row([
                self.channel_names[i].clone(),
                num(self.t_values[i]),
                num(self.p_values[i]),
                self.significant[i].to_string(),
            ]);
        }
        w.finish()
    }
}

/// Band power of paired imagery and rest epochs (paired by trial index),
/// then per channel a paired t and a permutation p. Each channel draws from
/// a random stream named after the channel, so reordering the montage
/// reorders the map and nothing else.
pub fn stat_map(
    imagery: &EpochSet,
    rest: &EpochSet,
    band_hz: (f64, f64),
    n_perm: usize,
    seed: u64,
) -> Result<StatMap> {
    if imagery.n_trials() != rest.n_trials() {
        return Err(Error::Shape(format!(
            "{} imagery trials vs {} rest trials",
            imagery.n_trials(),
            rest.n_trials()
        )));
    }
    if imagery.montage() != rest.montage() {
        return Err(Error::Shape("imagery and rest epochs use different montages".into()));
    }
    let pi = band_power(imagery, band_hz)?;
    let pr = band_power(rest, band_hz)?;
    let streams = SeedStream::new(seed);
    let n_ch = imagery.n_channels();
    let mut t_values = Vec::with_capacity(n_ch);
    let mut p_values = Vec::with_capacity(n_ch);
    for (ch, name) in imagery.montage().names().iter().enumerate() {
        let a = pi.column(ch).to_vec();
        let b = pr.column(ch).to_vec();
        t_values.push(paired_t(&a, &b)?);
        let mut rng = streams.child("permutation", 0).rng(name, 0);
        p_values.push(permutation_test_with(&a, &b, n_perm, &mut rng, PermutationScheme::Auto)?);
    }
    let significant = p_values.iter().map(|&p| p <= ALPHA).collect();
    Ok(StatMap {
        channel_names: imagery.montage().names().to_vec(),
        t_values,
        p_values,
        significant,
    })
}
