//! Maximum-likelihood fitting by EM (Gaussian variants) and ECM with latent
//! scale weights (Student-t variants), with multi-start initialization.
//!
//! Each start alternates an E-step, which records the observed-data
//! log-likelihood of the current parameters, with an M-step. The trace is
//! therefore the log-likelihood of every parameter set visited, and the
//! returned model is the one the last E-step was computed for.

mod dof;
mod gating;
mod init;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::densities::{GaussianParams, LinearMap, StudentParams};
use crate::error::{CwmError, Result};
use crate::linalg::{self, factor_with_ridge};
use crate::model::{normalize_log, Component, Conditional, CwmModel, Dataset, Gate, Marginal, Variant};

pub use dof::{estimate_dof, DofEstimate, DofStats, DOF_MAX, DOF_MIN};
pub use gating::{HESSIAN_RIDGE, MAX_NEWTON_STEPS};
pub use init::{initial_partition, initialize, kmeans, partition_to_responsibilities, KMEANS_MAX_ITER, MAX_REDRAWS};

/// Ridge added to a covariance (relative to `trace/d`) when its factorization fails.
pub const COV_RIDGE: f64 = 1e-8;
/// Ridge attempts before a start is declared degenerate.
pub const RIDGE_ATTEMPTS: usize = 3;
/// Lower bound on a regression noise variance, relative to the sample variance of `y`.
pub const NOISE_VAR_FLOOR: f64 = 1e-8;
/// Starting dof when `dof_mode = estimate`.
pub const INITIAL_DOF: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Kmeans,
    RandomPartition,
    GivenLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofMode {
    Fixed(f64),
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    #[serde(rename = "G")]
    pub groups: usize,
    pub variant: Variant,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_starts: usize,
    pub init: InitStrategy,
    pub dof_mode: DofMode,
    pub seed: u64,
    /// Hold `π_g = 1/G` instead of re-estimating the mixing weights.
    pub equal_weights: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::new(2, Variant::GaussianCwm)
    }
}

impl FitConfig {
    pub fn new(groups: usize, variant: Variant) -> Self {
        Self {
            groups,
            variant,
            max_iter: 500,
            rel_tol: 1e-8,
            n_starts: 10,
            init: InitStrategy::Kmeans,
            dof_mode: DofMode::Estimate,
            seed: 0,
            equal_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(CwmError::InvalidParameter("G must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(CwmError::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(CwmError::InvalidParameter("rel_tol must be positive".into()));
        }
        if self.n_starts == 0 {
            return Err(CwmError::InvalidParameter("n_starts must be at least 1".into()));
        }
        if let DofMode::Fixed(v) = self.dof_mode {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CwmError::InvalidParameter(format!("fixed dof must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn starting_dof(&self) -> f64 {
        match self.dof_mode {
            DofMode::Fixed(v) => v,
            DofMode::Estimate => INITIAL_DOF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: CwmModel,
    pub loglik_trace: Vec<f64>,
    /// `N × G` posterior probabilities under `model`.
    pub responsibilities: Vec<Vec<f64>>,
    /// Maximum-posterior component per row, 0-based.
    pub classification: Vec<usize>,
    pub converged: bool,
    pub n_iter: usize,
    pub start_index: usize,
    pub dof_estimated: bool,
    /// Some dof estimate sat on the search bracket at the final M-step.
    pub dof_at_boundary: bool,
    pub degenerate_starts: usize,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    /// Wraps a given model as a zero-iteration result on `data`.
    pub fn from_model(model: CwmModel, data: &Dataset) -> Result<Self> {
        let mut responsibilities = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            responsibilities.push(model.posterior(data.x_row(i), data.y()[i])?);
        }
        let classification = model.classify(data)?;
        let loglik = model.log_likelihood(data)?;
        Ok(Self {
            model,
            loglik_trace: vec![loglik],
            responsibilities,
            classification,
            converged: true,
            n_iter: 0,
            start_index: 0,
            dof_estimated: false,
            dof_at_boundary: false,
            degenerate_starts: 0,
        })
    }
}

/// Largest drop between consecutive trace entries, relative to `1 + |ℓ|`.
pub fn max_relative_decrease(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[0] - w[1]) / (1.0 + w[1].abs()))
        .fold(0.0, f64::max)
}

/// RNG for start `k`: the master stream advanced by `k` jumps of `2^128` steps.
pub fn start_rng(seed: u64, k: usize) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..k {
        rng.jump();
    }
    rng
}

/// Fits `config.variant` with `config.groups` components, keeping the best start.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    check_size(data, config)?;
    let starts = if config.init == InitStrategy::GivenLabels { 1 } else { config.n_starts };
    let outcomes = run_starts(starts, |k| {
        let mut rng = start_rng(config.seed, k);
        let tau = initialize(data, config, &mut rng)?;
        run_from_responsibilities(data, config, tau, k)
    });
    pick_best(outcomes)
}

/// Single EM run seeded by a hard partition (0-based labels).
pub fn fit_from_partition(data: &Dataset, config: &FitConfig, partition: &[usize]) -> Result<FitResult> {
    config.validate()?;
    check_size(data, config)?;
    if partition.len() != data.n() {
        return Err(CwmError::DimensionMismatch { expected: data.n(), found: partition.len() });
    }
    if partition.iter().any(|&k| k >= config.groups) {
        return Err(CwmError::InvalidInput("partition label out of range".into()));
    }
    let tau = partition_to_responsibilities(partition, config.groups);
    run_from_responsibilities(data, config, tau, 0)
}

/// Single EM run started from given parameters (the first step is an E-step).
pub fn fit_from_model(data: &Dataset, config: &FitConfig, start: &CwmModel) -> Result<FitResult> {
    config.validate()?;
    check_size(data, config)?;
    if start.variant() != config.variant || start.n_components() != config.groups {
        return Err(CwmError::InvalidInput("starting model does not match the fit configuration".into()));
    }
    if start.d() != data.d() {
        return Err(CwmError::DimensionMismatch { expected: data.d(), found: start.d() });
    }
    Runner::new(data, config).run(start.clone(), 0)
}

fn check_size(data: &Dataset, config: &FitConfig) -> Result<()> {
    if data.n() <= config.groups {
        return Err(CwmError::InvalidInput(format!("need N > G, got N = {} and G = {}", data.n(), config.groups)));
    }
    Ok(())
}

fn run_from_responsibilities(data: &Dataset, config: &FitConfig, tau: Vec<f64>, start: usize) -> Result<FitResult> {
    let mut runner = Runner::new(data, config);
    runner.tau = tau;
    let model = runner.m_step(None)?;
    runner.run(model, start)
}

/// Runs `f(0..starts)` on scoped worker threads; results come back in start order.
fn run_starts<T: Send>(starts: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(starts);
    if workers <= 1 {
        return (0..starts).map(&f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..starts).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..starts).step_by(workers).map(|k| (k, f(k))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (k, v) in h.join().expect("fit worker panicked") {
                slots[k] = Some(v);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every start ran")).collect()
}

fn pick_best(outcomes: Vec<Result<FitResult>>) -> Result<FitResult> {
    let total = outcomes.len();
    let mut best: Option<FitResult> = None;
    let mut degenerate = 0;
    let mut last_err = None;
    for out in outcomes {
        match out {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.loglik() > b.loglik()) {
                    best = Some(r);
                }
            }
            Err(e @ CwmError::Degenerate(_)) | Err(e @ CwmError::NotPositiveDefinite { .. }) => {
                degenerate += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(mut r) => {
            r.degenerate_starts = degenerate;
            Ok(r)
        }
        None => Err(CwmError::Degenerate(format!(
            "all {total} starts degenerate (last: {})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))),
    }
}

struct Runner<'a> {
    data: &'a Dataset,
    config: &'a FitConfig,
    g: usize,
    tau: Vec<f64>,
    /// Latent scale weights of the covariate part (t variants).
    ux: Vec<f64>,
    /// Latent scale weights of the conditional part (t variants).
    uy: Vec<f64>,
    noise_floor: f64,
    dof_at_boundary: bool,
}

impl<'a> Runner<'a> {
    fn new(data: &'a Dataset, config: &'a FitConfig) -> Self {
        let (n, g) = (data.n(), config.groups);
        let mean_y = data.y().iter().sum::<f64>() / n as f64;
        let var_y = data.y().iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64;
        Self {
            data,
            config,
            g,
            tau: vec![0.0; n * g],
            ux: vec![1.0; n * g],
            uy: vec![1.0; n * g],
            noise_floor: NOISE_VAR_FLOOR * var_y.max(f64::MIN_POSITIVE),
            dof_at_boundary: false,
        }
    }

    fn run(mut self, mut model: CwmModel, start_index: usize) -> Result<FitResult> {
        let mut trace = Vec::new();
        let mut converged = false;
        loop {
            let ll = self.e_step(&model);
            if !ll.is_finite() {
                return Err(CwmError::Degenerate("non-finite log-likelihood".into()));
            }
            trace.push(ll);
            if let [.., prev, cur] = trace[..] {
                if (cur - prev).abs() / (1.0 + cur.abs()) < self.config.rel_tol {
                    converged = true;
                    break;
                }
            }
            if trace.len() >= self.config.max_iter {
                break;
            }
            model = self.m_step(Some(&model))?;
        }
        let responsibilities: Vec<Vec<f64>> = self.tau.chunks(self.g).map(|r| r.to_vec()).collect();
        let classification = responsibilities.iter().map(|r| crate::model::argmax(r)).collect();
        Ok(FitResult {
            model,
            n_iter: trace.len(),
            loglik_trace: trace,
            responsibilities,
            classification,
            converged,
            start_index,
            dof_estimated: self.config.variant.is_student() && self.config.dof_mode == DofMode::Estimate,
            dof_at_boundary: self.dof_at_boundary,
            degenerate_starts: 0,
        })
    }

    /// Fills responsibilities (and latent weights) for `model`; returns the log-likelihood.
    fn e_step(&mut self, model: &CwmModel) -> f64 {
        let (g, d) = (self.g, self.data.d());
        let variant = model.variant();
        let fixed: Vec<f64> = model.components().iter().map(|c| c.weight.ln()).collect();
        let mut log_mix = fixed.clone();
        let mut ll = 0.0;
        for i in 0..self.data.n() {
            let x = self.data.x_row(i);
            let y = self.data.y()[i];
            if model.gating().is_some() {
                model.gate_log_probs(x, &mut log_mix);
            }
            let row = &mut self.tau[i * g..(i + 1) * g];
            for k in 0..g {
                let parts = model.component_parts(k, x, y, log_mix[k]);
                row[k] = parts.log_term;
                let comp = &model.components()[k];
                let cond = &comp.y_conditional;
                let r2 = parts.resid * parts.resid / cond.noise_var;
                match variant {
                    Variant::TCwm => {
                        let nu = comp.x_marginal.as_ref().and_then(|m| m.dof()).expect("validated");
                        let zeta = cond.dof.expect("validated");
                        self.ux[i * g + k] = (nu + d as f64) / (nu + parts.delta_x);
                        self.uy[i * g + k] = (zeta + 1.0) / (zeta + r2);
                    }
                    Variant::Fmt => {
                        let nu = comp.x_marginal.as_ref().and_then(|m| m.dof()).expect("validated");
                        let u = (nu + d as f64 + 1.0) / (nu + parts.delta_x + r2);
                        self.ux[i * g + k] = u;
                        self.uy[i * g + k] = u;
                    }
                    _ => {}
                }
            }
            ll += normalize_log(row);
        }
        ll
    }

    fn m_step(&mut self, prev: Option<&CwmModel>) -> Result<CwmModel> {
        let (n, g, d) = (self.data.n(), self.g, self.data.d());
        let variant = self.config.variant;
        let estimate = self.config.dof_mode == DofMode::Estimate && prev.is_some();
        let mut at_boundary = false;
        let mut comps = Vec::with_capacity(g);
        for k in 0..g {
            let tau_k = |i: usize| self.tau[i * g + k];
            let nk: f64 = (0..n).map(tau_k).sum();
            if !(nk >= (d + 2) as f64) {
                return Err(CwmError::Degenerate(format!("component {} has responsibility mass {nk:.3} < d+2", k + 1)));
            }
            let weight = if self.config.equal_weights { 1.0 / g as f64 } else { nk / n as f64 };
            let prev_comp = prev.map(|m| &m.components()[k]);
            let prev_nu = prev_comp
                .and_then(|c| c.x_marginal.as_ref())
                .and_then(|m| m.dof())
                .unwrap_or_else(|| self.config.starting_dof());
            let prev_zeta = match variant {
                Variant::TCwm => prev_comp.and_then(|c| c.y_conditional.dof).unwrap_or_else(|| self.config.starting_dof()),
                _ => 0.0,
            };

            let wx: Vec<f64> = (0..n).map(|i| tau_k(i) * self.ux[i * g + k]).collect();
            let wy: Vec<f64> = (0..n).map(|i| tau_k(i) * self.uy[i * g + k]).collect();

            let mut nu = prev_nu;
            let mut zeta = prev_zeta;
            if estimate {
                let taus = (0..n).map(tau_k);
                match variant {
                    Variant::TCwm => {
                        let ux = (0..n).map(|i| self.ux[i * g + k]);
                        nu = dof_update(&mut at_boundary, DofStats::from_weights(taus.clone(), ux, prev_nu, d))?;
                        let uy = (0..n).map(|i| self.uy[i * g + k]);
                        zeta = dof_update(&mut at_boundary, DofStats::from_weights(taus, uy, prev_zeta, 1))?;
                    }
                    Variant::Fmt => {
                        let u = (0..n).map(|i| self.ux[i * g + k]);
                        nu = dof_update(&mut at_boundary, DofStats::from_weights(taus, u, prev_nu, d + 1))?;
                    }
                    _ => {}
                }
            }

            let x_marginal = if variant.has_marginal() {
                let (mean, cov) = weighted_moments(self.data, &wx, nk);
                let (_, cov, _) = factor_with_ridge(&cov, d, COV_RIDGE, RIDGE_ATTEMPTS).map_err(|e| {
                    CwmError::Degenerate(format!("component {} covariance: {e}", k + 1))
                })?;
                Some(match variant {
                    Variant::TCwm | Variant::Fmt => Marginal::Student(StudentParams::new(mean, cov, nu)?),
                    _ => Marginal::Gaussian(GaussianParams::new(mean, cov)?),
                })
            } else {
                None
            };

            let (map, resid_ss) = weighted_regression(self.data, &wy)
                .map_err(|e| CwmError::Degenerate(format!("component {} regression: {e}", k + 1)))?;
            let noise_var = (resid_ss / nk).max(self.noise_floor);
            let y_conditional = match variant {
                Variant::TCwm => Conditional::student(map, noise_var, zeta),
                Variant::Fmt => Conditional::student(map, noise_var, nu + d as f64),
                _ => Conditional::gaussian(map, noise_var),
            };
            comps.push(Component { weight, x_marginal, y_conditional });
        }
        let gating = if variant == Variant::Fmrc {
            let start = prev.and_then(|m| m.gating()).map(|g| g.to_vec()).unwrap_or_else(|| vec![Gate::zero(d); g]);
            Some(gating::update_gating(self.data, &self.tau, g, &start))
        } else {
            None
        };
        // fmrc ignores the weights; they are kept as the empirical shares for reporting
        renormalize(&mut comps);
        self.dof_at_boundary = at_boundary;
        CwmModel::new(variant, comps, gating)
    }

}

fn dof_update(at_boundary: &mut bool, stats: DofStats) -> Result<f64> {
    let est = estimate_dof(&stats)?;
    *at_boundary |= est.at_boundary;
    Ok(est.value)
}

fn renormalize(comps: &mut [Component]) {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
}

/// Weighted mean of `x` (weights `w`) and scatter divided by `denom`.
fn weighted_moments(data: &Dataset, w: &[f64], denom: f64) -> (Vec<f64>, Vec<f64>) {
    let d = data.d();
    let sw: f64 = w.iter().sum();
    let mut mean = vec![0.0; d];
    for (i, wi) in w.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(data.x_row(i)) {
            *m += wi * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= sw);
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (i, wi) in w.iter().enumerate() {
        for (df, (x, m)) in diff.iter_mut().zip(data.x_row(i).iter().zip(&mean)) {
            *df = x - m;
        }
        for a in 0..d {
            let wa = wi * diff[a];
            for b in 0..=a {
                cov[a * d + b] += wa * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (mean, cov)
}

/// Weighted least squares of `y` on `(1, x)`; returns the fit and `Σ w r²`.
fn weighted_regression(data: &Dataset, w: &[f64]) -> Result<(LinearMap, f64)> {
    let d = data.d();
    let sw: f64 = w.iter().sum();
    let (xbar, sxx) = weighted_moments(data, w, 1.0);
    let ybar = data.y().iter().zip(w).map(|(y, wi)| wi * y).sum::<f64>() / sw;
    let mut sxy = vec![0.0; d];
    for (i, wi) in w.iter().enumerate() {
        let ry = wi * (data.y()[i] - ybar);
        for (s, (x, m)) in sxy.iter_mut().zip(data.x_row(i).iter().zip(&xbar)) {
            *s += ry * (x - m);
        }
    }
    let (chol, _, _) = factor_with_ridge(&sxx, d, COV_RIDGE, RIDGE_ATTEMPTS)?;
    let slope = chol.solve(&sxy);
    let intercept = ybar - linalg::dot(&slope, &xbar);
    let map = LinearMap::new(slope, intercept);
    let ss = (0..data.n()).map(|i| w[i] * (data.y()[i] - map.eval(data.x_row(i))).powi(2)).sum();
    Ok((map, ss))
}
