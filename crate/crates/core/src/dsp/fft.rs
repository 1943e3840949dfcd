//! Complex FFT: iterative radix-2 for power-of-two lengths, Bluestein's
//! chirp-z for everything else.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed tables for one transform length. Reuse a plan when the same
/// length is transformed many times.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2 { twiddles: Vec<Complex64> },
    Bluestein {
        inner: Box<FftPlan>,
        chirp: Vec<Complex64>,
        /// FFT of the conjugate chirp filter, length `inner.n`.
        filter: Vec<Complex64>,
    },
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("fft of zero-length input".into()));
        }
        if n.is_power_of_two() {
            let twiddles = (0..n / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
                .collect();
            return Ok(Self {
                n,
                kind: PlanKind::Radix2 { twiddles },
            });
        }
        let m = (2 * n - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                // k^2 mod 2n keeps the angle argument small and exact
                let k2 = (k as u128 * k as u128) % two_n;
                Complex64::from_polar(1.0, -PI * k2 as f64 / n as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for k in 1..n {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.forward_in_place(&mut filter);
        Ok(Self {
            n,
            kind: PlanKind::Bluestein {
                inner: Box::new(inner),
                chirp,
                filter,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unnormalized forward transform, `X[k] = sum_t x[t] e^{-2 pi i k t / n}`.
    pub fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(x.len())?;
        let mut buf = x.to_vec();
        self.forward_in_place(&mut buf);
        Ok(buf)
    }

    /// Inverse transform including the `1/n` factor.
    pub fn inverse(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(x.len())?;
        let mut buf = x.to_vec();
        self.inverse_in_place(&mut buf);
        Ok(buf)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Shape(format!("plan for length {} given {len} values", self.n)));
        }
        Ok(())
    }

    pub(crate) fn inverse_in_place(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward_in_place(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }

    pub(crate) fn forward_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kind {
            PlanKind::Radix2 { twiddles } => radix2(buf, twiddles),
            PlanKind::Bluestein { inner, chirp, filter } => {
                let m = inner.n;
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for (k, (&x, &w)) in buf.iter().zip(chirp).enumerate() {
                    a[k] = x * w;
                }
                inner.forward_in_place(&mut a);
                for (v, &f) in a.iter_mut().zip(filter) {
                    *v *= f;
                }
                inner.inverse_in_place(&mut a);
                for (k, out) in buf.iter_mut().enumerate() {
                    *out = a[k] * chirp[k];
                }
            }
        }
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for k in 0..half {
                let t = hi[k] * twiddles[k * step];
                hi[k] = lo[k] - t;
                lo[k] += t;
            }
        }
        len <<= 1;
    }
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    FftPlan::new(x.len())?.forward(x)
}

pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    FftPlan::new(x.len())?.inverse(x)
}

/// FFT of a real series.
pub fn rfft(x: &[f64]) -> Result<Vec<Complex64>> {
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&buf)
}

/// Analytic signal `x + i H[x]` via the frequency-domain construction:
/// keep DC (and Nyquist for even n), double positive frequencies, zero the
/// negative ones.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("analytic signal of empty series".into()));
    }
    if x.len() < 4 {
        return Err(Error::Range(format!("analytic signal needs >= 4 samples, got {}", x.len())));
    }
    let plan = FftPlan::new(x.len())?;
    let mut buf = Vec::with_capacity(x.len());
    analytic_signal_with(&plan, x, &mut buf);
    Ok(buf)
}

/// Same as [`analytic_signal`] with a caller-provided plan and buffer.
pub(crate) fn analytic_signal_with(plan: &FftPlan, x: &[f64], buf: &mut Vec<Complex64>) {
    let n = x.len();
    buf.clear();
    buf.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
    plan.forward_in_place(buf);
    let positive_end = n.div_ceil(2); // exclusive; for even n the Nyquist bin stays as is
    for v in &mut buf[1..positive_end] {
        *v *= 2.0;
    }
    let neg_start = n / 2 + 1;
    for v in &mut buf[neg_start..] {
        *v = Complex64::new(0.0, 0.0);
    }
    plan.inverse_in_place(buf);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    fn random_series(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(1e-300, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn impulse_and_dc() {
        let c = |r| Complex64::new(r, 0.0);
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        for v in out {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
        let out = fft(&[c(1.0); 4]).unwrap();
        assert!((out[0] - c(4.0)).norm() < 1e-15);
        for v in &out[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(fft(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(ifft(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn length_24_matches_naive_dft() {
        let x = random_series(24, 24);
        assert!(max_rel_err(&fft(&x).unwrap(), &naive_dft(&x)) < 1e-9);
    }

    #[test]
    fn matches_naive_dft_up_to_64_and_round_trips() {
        for n in 1..=64 {
            let x = random_series(n, n as u64);
            let got = fft(&x).unwrap();
            assert!(max_rel_err(&got, &naive_dft(&x)) < 1e-9, "n={n}");
            let back = ifft(&got).unwrap();
            assert!(max_rel_err(&back, &x) < 1e-9, "n={n}");
        }
    }

    #[test]
    fn pipeline_lengths_round_trip() {
        for n in [250, 500, 1000, 1250, 1625] {
            let x = random_series(n, 5);
            let back = ifft(&fft(&x).unwrap()).unwrap();
            assert!(max_rel_err(&back, &x) < 1e-9, "n={n}");
        }
    }

    #[test]
    fn analytic_signal_of_cosine_has_unit_envelope() {
        let fs = 250.0;
        let x: Vec<f64> = (0..250).map(|t| (2.0 * PI * 10.0 * t as f64 / fs).cos()).collect();
        let a = analytic_signal(&x).unwrap();
        for (t, v) in a.iter().enumerate() {
            assert!((v.re - x[t]).abs() < 1e-9);
            if (25..225).contains(&t) {
                assert!((v.norm() - 1.0).abs() < 0.02, "t={t} |a|={}", v.norm());
            }
        }
    }

    #[test]
    fn hilbert_pair_of_sine_is_minus_cosine() {
        let fs = 250.0;
        let w = 2.0 * PI * 7.0 / fs;
        let x: Vec<f64> = (0..500).map(|t| (w * t as f64).sin()).collect();
        let a = analytic_signal(&x).unwrap();
        for t in 50..450 {
            assert!((a[t].im + (w * t as f64).cos()).abs() < 0.02, "t={t}");
        }
    }

    #[test]
    fn analytic_signal_has_no_negative_frequencies() {
        let x: Vec<f64> = random_series(37, 3).iter().map(|c| c.re).collect();
        let spec = fft(&analytic_signal(&x).unwrap()).unwrap();
        for v in &spec[37 / 2 + 1..] {
            assert!(v.norm() < 1e-9);
        }
        assert!(matches!(analytic_signal(&[1.0, 2.0, 3.0]), Err(Error::Range(_))));
    }
}
