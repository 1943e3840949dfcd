//! Common spatial patterns with a shrinkage LDA, combined one-vs-rest for
//! the four-class problem.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::eeg::EpochSet;
use crate::error::{Error, Result};

/// Filter pairs kept per binary problem.
pub const DEFAULT_PAIRS: usize = 2;
const RIDGE: f64 = 1e-6;

/// Spatial filters as rows, top `m` then bottom `m` by eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct CspModel {
    filters: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    selected: Vec<usize>,
}

impl CspModel {
    /// All `channels` filters, rows sorted by descending eigenvalue.
    pub fn all_filters(&self) -> &DMatrix<f64> {
        &self.filters
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row indices of the retained filters.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn n_channels(&self) -> usize {
        self.filters.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.selected.len()
    }

    pub fn filter(&self, k: usize) -> Vec<f64> {
        self.filters.row(self.selected[k]).iter().copied().collect()
    }
}

/// Trace-normalized, mean-removed spatial covariance of one trial.
fn trial_covariance(x: ArrayView2<'_, f32>) -> Result<DMatrix<f64>> {
    let (c, t) = x.dim();
    let mut buf = vec![0.0f64; c * t];
    for (ch, row) in x.rows().into_iter().enumerate() {
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / t as f64;
        for (i, &v) in row.iter().enumerate() {
            buf[ch * t + i] = f64::from(v) - mean;
        }
    }
    let mut cov = vec![0.0f64; c * c];
    // SAFETY: buf is c x t row-major and cov is c x c; strides match the shapes.
    unsafe {
        matrixmultiply::dgemm(
            c, t, c, 1.0,
            buf.as_ptr(), t as isize, 1,
            buf.as_ptr(), 1, t as isize,
            0.0, cov.as_mut_ptr(), c as isize, 1,
        );
    }
    let tr: f64 = (0..c).map(|i| cov[i * c + i]).sum();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::Degenerate("trial with zero or non-finite variance".into()));
    }
    Ok(DMatrix::from_row_slice(c, c, &cov) / tr)
}

fn trial_covariances(epochs: &EpochSet) -> Result<Vec<DMatrix<f64>>> {
    (0..epochs.n_trials()).map(|i| trial_covariance(epochs.trial(i))).collect()
}

fn mean_covariance<'a>(covs: impl Iterator<Item = &'a DMatrix<f64>>, dim: usize) -> Result<DMatrix<f64>> {
    let mut sum = DMatrix::zeros(dim, dim);
    let mut n = 0usize;
    for c in covs {
        sum += c;
        n += 1;
    }
    if n < 2 {
        return Err(Error::Range(format!("CSP needs >= 2 trials per class, got {n}")));
    }
    sum /= n as f64;
    let ridge = RIDGE * sum.trace() / dim as f64;
    for i in 0..dim {
        sum[(i, i)] += ridge;
    }
    Ok(sum)
}

/// Trace-normalized mean covariance of one class with the ridge `csp_fit`
/// applies.
pub fn class_covariance(epochs: &EpochSet) -> Result<DMatrix<f64>> {
    mean_covariance(trial_covariances(epochs)?.iter(), epochs.n_channels())
}

/// Fits CSP to two classes: solves `Ca w = lambda (Ca + Cb) w` by whitening
/// the composite covariance.
pub fn csp_fit(class_a: &EpochSet, class_b: &EpochSet, m: usize) -> Result<CspModel> {
    if class_a.n_channels() != class_b.n_channels() {
        return Err(Error::Shape(format!(
            "{} vs {} channels",
            class_a.n_channels(),
            class_b.n_channels()
        )));
    }
    let ca = trial_covariances(class_a)?;
    let cb = trial_covariances(class_b)?;
    csp_from_covariances(&ca.iter().collect::<Vec<_>>(), &cb.iter().collect::<Vec<_>>(), m)
}

fn csp_from_covariances(a: &[&DMatrix<f64>], b: &[&DMatrix<f64>], m: usize) -> Result<CspModel> {
    let dim = a.first().or(b.first()).map(|c| c.nrows()).unwrap_or(0);
    if m == 0 || 2 * m > dim {
        return Err(Error::Range(format!("{m} filter pairs for {dim} channels")));
    }
    let ca = mean_covariance(a.iter().copied(), dim)?;
    let cb = mean_covariance(b.iter().copied(), dim)?;
    let composite = &ca + &cb;
    let eig = SymmetricEigen::new(composite);
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.iter().any(|&v| !(v > 1e-14 * max)) {
        return Err(Error::Numeric("composite covariance is singular".into()));
    }
    // P = diag(1/sqrt(d)) U^T whitens the composite covariance.
    let mut p = eig.eigenvectors.transpose();
    for (i, mut row) in p.row_iter_mut().enumerate() {
        row /= eig.eigenvalues[i].sqrt();
    }
    let s = &p * &ca * p.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let se = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));
    let w_all = se.eigenvectors.transpose() * &p;
    let mut filters = DMatrix::zeros(dim, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (r, &k) in order.iter().enumerate() {
        filters.set_row(r, &w_all.row(k));
        eigenvalues.push(se.eigenvalues[k].clamp(0.0, 1.0));
    }
    let selected = (0..m).chain(dim - m..dim).collect();
    Ok(CspModel { filters, eigenvalues, selected })
}

/// Normalized log-variance features: `ln(var_i / sum_j var_j)` over the
/// retained filters, one row per trial.
pub fn csp_features(model: &CspModel, epochs: &EpochSet) -> Result<Array2<f64>> {
    if epochs.n_channels() != model.n_channels() {
        return Err(Error::Shape(format!(
            "model expects {} channels, epochs have {}",
            model.n_channels(),
            epochs.n_channels()
        )));
    }
    let filters: Vec<Vec<f64>> = (0..model.n_features()).map(|k| model.filter(k)).collect();
    let t = epochs.n_samples();
    let mut out = Array2::zeros((epochs.n_trials(), filters.len()));
    let mut z = vec![0.0f64; t];
    for tr in 0..epochs.n_trials() {
        let x = epochs.trial(tr);
        let mut vars = Vec::with_capacity(filters.len());
        for w in &filters {
            z.iter_mut().for_each(|v| *v = 0.0);
            for (ch, row) in x.rows().into_iter().enumerate() {
                let wc = w[ch];
                for (zi, &v) in z.iter_mut().zip(row.iter()) {
                    *zi += wc * f64::from(v);
                }
            }
            let mean = z.iter().sum::<f64>() / t as f64;
            vars.push(z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64);
        }
        let total: f64 = vars.iter().sum();
        if !(total > 0.0) || vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Degenerate(format!("trial {tr} has zero variance after spatial filtering")));
        }
        for (k, v) in vars.iter().enumerate() {
            out[[tr, k]] = (v / total).ln();
        }
    }
    Ok(out)
}

/// Pooled-covariance linear discriminant. `decision` returns one affine
/// score per class; prediction is the argmax, ties to the lowest class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<u8>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub priors: Vec<f64>,
}

impl LdaModel {
    pub fn n_features(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_one(&self, x: &[f64]) -> u8 {
        self.classes[argmax(&self.decision(x))]
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fits LDA with a ridge of `1e-6 * trace / dim` on the pooled covariance.
pub fn lda_fit(features: &Array2<f64>, labels: &[u8]) -> Result<LdaModel> {
    let (n, d) = features.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature".into()));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Stratification(format!("LDA needs >= 2 classes, got {}", classes.len())));
    }
    let mut means = Vec::with_capacity(classes.len());
    let mut priors = Vec::with_capacity(classes.len());
    for &c in &classes {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let mut mu = DVector::zeros(d);
        for &i in &rows {
            for j in 0..d {
                mu[j] += features[[i, j]];
            }
        }
        means.push(mu / rows.len() as f64);
        priors.push(rows.len() as f64 / n as f64);
    }
    let mut pooled = DMatrix::zeros(d, d);
    for i in 0..n {
        let k = classes.binary_search(&labels[i]).unwrap_or(0);
        let r = DVector::from_iterator(d, (0..d).map(|j| features[[i, j]] - means[k][j]));
        pooled += &r * r.transpose();
    }
    pooled /= (n.saturating_sub(classes.len())).max(1) as f64;
    let ridge = RIDGE * pooled.trace() / d as f64;
    let ridge = if ridge > 0.0 { ridge } else { RIDGE };
    for j in 0..d {
        pooled[(j, j)] += ridge;
    }
    let chol = pooled
        .cholesky()
        .ok_or_else(|| Error::Numeric("pooled covariance is not positive definite".into()))?;
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for (mu, prior) in means.iter().zip(&priors) {
        let w = chol.solve(mu);
        biases.push(-0.5 * mu.dot(&w) + prior.ln());
        weights.push(w.iter().copied().collect());
    }
    Ok(LdaModel { classes, weights, biases, priors })
}

pub fn lda_predict(model: &LdaModel, features: &Array2<f64>) -> Result<Vec<u8>> {
    if features.ncols() != model.n_features() {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            model.n_features(),
            features.ncols()
        )));
    }
    Ok(features
        .rows()
        .into_iter()
        .map(|r| model.predict_one(&r.to_vec()))
        .collect())
}

/// One CSP + LDA binary model per class (class vs the rest).
#[derive(Debug, Clone, PartialEq)]
pub struct CspLda {
    classes: Vec<u8>,
    models: Vec<(CspModel, LdaModel)>,
}

#[derive(Serialize, Deserialize)]
struct CspLdaHeader {
    kind: String,
    n_channels: usize,
    classes: Vec<u8>,
    selected: Vec<usize>,
    lda: Vec<LdaModel>,
}

impl CspLda {
    pub fn fit(epochs: &EpochSet, m: usize) -> Result<CspLda> {
        let classes = epochs.classes();
        if classes.len() < 2 {
            return Err(Error::Stratification(format!(
                "one-vs-rest needs >= 2 classes, got {}",
                classes.len()
            )));
        }
        let covs = trial_covariances(epochs)?;
        let labels = epochs.labels();
        let mut models = Vec::with_capacity(classes.len());
        for &c in &classes {
            let one: Vec<&DMatrix<f64>> = covs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(v, _)| v).collect();
            let rest: Vec<&DMatrix<f64>> = covs.iter().zip(labels).filter(|(_, &l)| l != c).map(|(v, _)| v).collect();
            let csp = csp_from_covariances(&one, &rest, m)?;
            let feats = csp_features(&csp, epochs)?;
            let bin: Vec<u8> = labels.iter().map(|&l| u8::from(l == c)).collect();
            let lda = lda_fit(&feats, &bin)?;
            models.push((csp, lda));
        }
        Ok(CspLda { classes, models })
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    /// Per trial, one score per class: the "one" minus "rest" discriminant.
    pub fn scores(&self, epochs: &EpochSet) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((epochs.n_trials(), self.classes.len()));
        for (k, (csp, lda)) in self.models.iter().enumerate() {
            let feats = csp_features(csp, epochs)?;
            let one = lda.classes.iter().position(|&c| c == 1).unwrap_or(1);
            for (i, r) in feats.rows().into_iter().enumerate() {
                let d = lda.decision(&r.to_vec());
                out[[i, k]] = d[one] - d[1 - one];
            }
        }
        Ok(out)
    }

    pub fn predict(&self, epochs: &EpochSet) -> Result<Vec<u8>> {
        let s = self.scores(epochs)?;
        Ok(s.rows()
            .into_iter()
            .map(|r| self.classes[argmax(&r.to_vec())])
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n_channels = self.models[0].0.n_channels();
        let header = CspLdaHeader {
            kind: "csp-lda-ovr".into(),
            n_channels,
            classes: self.classes.clone(),
            selected: self.models[0].0.selected.clone(),
            lda: self.models.iter().map(|(_, l)| l.clone()).collect(),
        };
        let payload = self.models.iter().flat_map(|(csp, _)| {
            let rows = csp.filters.transpose();
            rows.iter().map(|&v| v as f32).chain(csp.eigenvalues.iter().map(|&v| v as f32)).collect::<Vec<_>>()
        });
        container::encode(&header, payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CspLda> {
        let (h, payload): (CspLdaHeader, Vec<f32>) = container::decode(bytes)?;
        if h.kind != "csp-lda-ovr" {
            return Err(Error::Format(format!("not a CSP-LDA model: {}", h.kind)));
        }
        let c = h.n_channels;
        let per = c * c + c;
        if h.lda.len() != h.classes.len() || payload.len() != per * h.classes.len() {
            return Err(Error::Corruption("CSP-LDA payload does not match header".into()));
        }
        if h.selected.iter().any(|&s| s >= c) {
            return Err(Error::Corruption("selected filter index out of range".into()));
        }
        let models = payload
            .chunks_exact(per)
            .zip(h.lda)
            .map(|(chunk, lda)| {
                let filters = DMatrix::from_row_iterator(c, c, chunk[..c * c].iter().map(|&v| f64::from(v)));
                let eigenvalues = chunk[c * c..].iter().map(|&v| f64::from(v)).collect();
                (CspModel { filters, eigenvalues, selected: h.selected.clone() }, lda)
            })
            .collect();
        Ok(CspLda { classes: h.classes, models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CspLda> {
        Self::from_bytes(&container::read_file(path.as_ref())?)
    }
}
