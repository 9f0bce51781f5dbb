//! Evaluation quantities: Wilks' Λ, the index of weighted model fitting ℰ,
//! the misclassification rate η with label alignment, BIC, confusion matrices.

use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{CwmError, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{CwmModel, Dataset, Label, Variant};

/// Largest number of real groups handled by brute-force alignment.
pub const MAX_ALIGN_GROUPS: usize = 8;

/// How rows labeled [`Label::Noise`] enter a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRows {
    #[default]
    Exclude,
    Include,
}

/// `det W / det T` on `z = (x, y)`, groups taken from `labels`.
///
/// With `NoiseRows::Exclude` noise rows are dropped; with `Include` they form one more group.
pub fn wilks_lambda(data: &Dataset, labels: &[Label], noise: NoiseRows) -> Result<f64> {
    if labels.len() != data.n() {
        return Err(CwmError::DimensionMismatch { expected: data.n(), found: labels.len() });
    }
    let q = data.d() + 1;
    let rows: Vec<usize> = (0..data.n()).filter(|&i| noise == NoiseRows::Include || labels[i] != Label::Noise).collect();
    if rows.len() <= q {
        return Err(CwmError::InvalidInput("too few rows for the scatter matrices".into()));
    }
    let key = |l: Label| match l {
        Label::Group(g) => g,
        Label::Noise => usize::MAX,
    };
    let mut groups: Vec<usize> = rows.iter().map(|&i| key(labels[i])).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut sums = vec![vec![0.0; q]; groups.len()];
    let mut counts = vec![0.0; groups.len()];
    let mut total = vec![0.0; q];
    for &i in &rows {
        let gi = groups.binary_search(&key(labels[i])).expect("collected above");
        counts[gi] += 1.0;
        for (j, v) in data.z_row(i).into_iter().enumerate() {
            sums[gi][j] += v;
            total[j] += v;
        }
    }
    let n = rows.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    for (s, c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c);
    }
    let mut w = vec![0.0; q * q];
    let mut t = vec![0.0; q * q];
    for &i in &rows {
        let z = data.z_row(i);
        let m = &sums[groups.binary_search(&key(labels[i])).expect("collected above")];
        for a in 0..q {
            for b in 0..q {
                w[a * q + b] += (z[a] - m[a]) * (z[b] - m[b]);
                t[a * q + b] += (z[a] - total[a]) * (z[b] - total[b]);
            }
        }
    }
    let ct = Cholesky::factor(&t, q).map_err(|_| CwmError::Degenerate("total scatter matrix is singular".into()))?;
    let det_w = linalg::det(&w, q);
    let lambda = (det_w.max(0.0).ln() - ct.log_det()).exp();
    Ok(lambda.clamp(0.0, 1.0))
}

/// Root mean square of `y − Σ_g μ(x; β_g) p(Ω_g | x, y)`.
///
/// `Exclude` skips rows whose reference label is noise (needs `reference`).
pub fn iwf(data: &Dataset, model: &CwmModel, noise: NoiseRows, reference: Option<&[Label]>) -> Result<f64> {
    if model.d() != data.d() {
        return Err(CwmError::DimensionMismatch { expected: model.d(), found: data.d() });
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for i in 0..data.n() {
        if noise == NoiseRows::Exclude && reference.is_some_and(|r| r[i] == Label::Noise) {
            continue;
        }
        let x = data.x_row(i);
        let post = model.posterior(x, data.y()[i])?;
        let fitted: f64 = model.components().iter().zip(&post).map(|(c, p)| c.y_conditional.map.eval(x) * p).sum();
        sum += (data.y()[i] - fitted).powi(2);
        used += 1;
    }
    if used == 0 {
        return Err(CwmError::InvalidInput("no rows left to evaluate".into()));
    }
    Ok((sum / used as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    pub eta: f64,
    /// `permutation[p]` is the true group matched to predicted group `p`.
    pub permutation: Vec<usize>,
    /// Rows are true classes, columns predicted classes after alignment;
    /// the last row/column is noise when noise occurs in either vector.
    pub confusion: Vec<Vec<usize>>,
}

/// η minimized over relabelings of the predicted groups; noise only matches noise.
pub fn misclassification(truth: &[Label], predicted: &[Label], groups: usize) -> Result<Misclassification> {
    if truth.len() != predicted.len() {
        return Err(CwmError::DimensionMismatch { expected: truth.len(), found: predicted.len() });
    }
    if truth.is_empty() {
        return Err(CwmError::InvalidInput("empty label vectors".into()));
    }
    let max_label = truth
        .iter()
        .chain(predicted)
        .filter_map(|l| l.group())
        .max()
        .map_or(0, |m| m + 1);
    let k = groups.max(max_label);
    if k > MAX_ALIGN_GROUPS {
        return Err(CwmError::InvalidParameter(format!("alignment supports at most {MAX_ALIGN_GROUPS} groups, got {k}")));
    }
    let has_noise = truth.iter().chain(predicted).any(|l| *l == Label::Noise);
    let idx = |l: Label| l.group().unwrap_or(k);
    let size = k + 1;
    let mut raw = vec![vec![0usize; size]; size];
    for (t, p) in truth.iter().zip(predicted) {
        raw[idx(*t)][idx(*p)] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best_perm = perm.clone();
    // Heap's algorithm: first maximal permutation in generation order wins
    let score = |perm: &[usize]| -> usize { (0..k).map(|p| raw[perm[p]][p]).sum() };
    let mut best_score = score(&perm);
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best_score {
                best_score = s;
                best_perm = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let hits = best_score + raw[k][k];
    let eta = 1.0 - hits as f64 / truth.len() as f64;
    let dim = if has_noise { size } else { k };
    let mut confusion = vec![vec![0usize; dim]; dim];
    for (t, p) in truth.iter().zip(predicted) {
        let col = match p {
            Label::Group(g) => best_perm[*g],
            Label::Noise => k,
        };
        confusion[idx(*t)][col] += 1;
    }
    Ok(Misclassification { eta, permutation: best_perm, confusion })
}

/// Free parameters of a fitted model.
pub fn parameter_count(model: &CwmModel, dof_estimated: bool) -> usize {
    let (g, d) = (model.n_components(), model.d());
    let variant = model.variant();
    let marginal = if variant.has_marginal() { d + d * (d + 1) / 2 } else { 0 };
    let regression = d + 2;
    let dof = match (variant, dof_estimated) {
        (Variant::TCwm, true) => 2,
        (Variant::Fmt, true) => 1,
        _ => 0,
    };
    let mixing = if variant == Variant::Fmrc { (g - 1) * (d + 1) } else { g - 1 };
    g * (marginal + regression + dof) + mixing
}

/// `−2ℓ̂ + k ln N`, smaller is better. For fmr/fmrc `ℓ̂` is the conditional log-likelihood.
pub fn bic(fit: &FitResult, n: usize) -> f64 {
    -2.0 * fit.loglik() + parameter_count(&fit.model, fit.dof_estimated) as f64 * (n as f64).ln()
}

/// BIC on the joint `(x, y)` scale for every variant.
///
/// Mixtures of regressions model only `y | x`; here they are completed with one
/// Gaussian law for `x` shared by all groups (its MLE adds `d + d(d+1)/2`
/// parameters), which keeps posteriors unchanged and makes the value comparable
/// with the joint models.
pub fn joint_bic(fit: &FitResult, data: &Dataset) -> Result<f64> {
    if fit.model.variant().has_marginal() {
        return Ok(bic(fit, data.n()));
    }
    let (n, d) = (data.n(), data.d());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.x_row(i)) {
            *m += x / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let x = data.x_row(i);
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (x[a] - mean[a]) * (x[b] - mean[b]) / n as f64;
            }
        }
    }
    let chol = Cholesky::factor(&cov, d)?;
    // Σ over rows of δ equals n·d at the MLE
    let ll_x = -0.5 * n as f64 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det() + d as f64);
    let k = parameter_count(&fit.model, fit.dof_estimated) + d + d * (d + 1) / 2;
    Ok(-2.0 * (fit.loglik() + ll_x) + k as f64 * (n as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wilks_lambda: Option<f64>,
    pub iwf: f64,
    pub misclassification_rate: Option<f64>,
    pub bic: f64,
    pub confusion: Option<Vec<Vec<usize>>>,
    pub permutation_used: Option<Vec<usize>>,
}

/// All metrics for a fit; Λ uses the fitted partition, η needs true labels on `data`.
pub fn evaluate(data: &Dataset, fit: &FitResult) -> Result<MetricsReport> {
    let predicted: Vec<Label> = fit.classification.iter().map(|&g| Label::Group(g)).collect();
    let lambda = wilks_lambda(data, &predicted, NoiseRows::Exclude).ok();
    let e = iwf(data, &fit.model, NoiseRows::Include, None)?;
    let mis = match data.labels() {
        Some(truth) => Some(misclassification(truth, &predicted, fit.model.n_components())?),
        None => None,
    };
    Ok(MetricsReport {
        wilks_lambda: lambda,
        iwf: e,
        misclassification_rate: mis.as_ref().map(|m| m.eta),
        bic: bic(fit, data.n()),
        confusion: mis.as_ref().map(|m| m.confusion.clone()),
        permutation_used: mis.map(|m| m.permutation),
    })
}
