//! The cluster-weighted model family.
//!
//! A [`CwmModel`] is a list of components, each of which holds a mixing weight,
//! an optional law for the covariates `x` and a linear conditional law for the
//! response `y | x`. One type covers every member of the family; the
//! [`Variant`] tag decides how the pieces combine:
//!
//! | variant        | `x` law         | `y | x` law                      | mixing          |
//! |----------------|-----------------|----------------------------------|-----------------|
//! | `gaussian_cwm` | Gaussian        | Gaussian                         | `π_g`           |
//! | `t_cwm`        | Student-t (`ν`) | Student-t (`ζ`)                  | `π_g`           |
//! | `fmg`          | Gaussian        | Gaussian                         | `π_g`           |
//! | `fmt`          | Student-t (`ν`) | Student-t, `ν+d` dof, scale `× (ν+δ)/(ν+d)` | `π_g` |
//! | `fmr`          | none            | Gaussian                         | `π_g`           |
//! | `fmrc`         | none            | Gaussian                         | softmax gating  |
//!
//! `fmg` and `fmt` components are stored in their conditional factorization, so
//! their densities coincide with those of the joint `(d+1)`-variate laws they
//! were built from. For `fmr` and `fmrc` the density is the conditional
//! `f(y | x)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densities::{normal_logpdf_1d, student_logpdf_1d, GaussianParams, LinearMap, StudentParams};
use crate::error::{CwmError, Result};
use crate::linalg::{self, Cholesky};

/// Absolute tolerance used when testing the equalities behind the nesting results.
pub const NESTING_TOL: f64 = 1e-10;
/// Tolerance on `Σ π_g = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GaussianCwm,
    TCwm,
    Fmg,
    Fmt,
    Fmr,
    Fmrc,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::GaussianCwm, Variant::TCwm, Variant::Fmg, Variant::Fmt, Variant::Fmr, Variant::Fmrc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GaussianCwm => "gaussian_cwm",
            Variant::TCwm => "t_cwm",
            Variant::Fmg => "fmg",
            Variant::Fmt => "fmt",
            Variant::Fmr => "fmr",
            Variant::Fmrc => "fmrc",
        }
    }

    pub fn has_marginal(self) -> bool {
        !matches!(self, Variant::Fmr | Variant::Fmrc)
    }

    pub fn is_student(self) -> bool {
        matches!(self, Variant::TCwm | Variant::Fmt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CwmError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CwmError::InvalidParameter(format!("unknown model variant '{s}'")))
    }
}

/// Law of the covariates within one group.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Gaussian(GaussianParams),
    Student(StudentParams),
}

impl Marginal {
    pub fn dim(&self) -> usize {
        match self {
            Marginal::Gaussian(g) => g.dim(),
            Marginal::Student(t) => t.dim(),
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            Marginal::Gaussian(g) => g.mean(),
            Marginal::Student(t) => t.location(),
        }
    }

    /// Covariance (Gaussian) or scale (Student-t) matrix, row-major.
    pub fn matrix(&self) -> &[f64] {
        match self {
            Marginal::Gaussian(g) => g.cov(),
            Marginal::Student(t) => t.scale(),
        }
    }

    pub fn dof(&self) -> Option<f64> {
        match self {
            Marginal::Gaussian(_) => None,
            Marginal::Student(t) => Some(t.dof()),
        }
    }

    pub fn cholesky(&self) -> &Cholesky {
        match self {
            Marginal::Gaussian(g) => g.cholesky(),
            Marginal::Student(t) => t.cholesky(),
        }
    }

    #[inline]
    pub(crate) fn mahalanobis_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Marginal::Gaussian(g) => g.mahalanobis_unchecked(x),
            Marginal::Student(t) => t.mahalanobis_unchecked(x),
        }
    }

    #[inline]
    pub(crate) fn logpdf_from_delta(&self, delta: f64) -> f64 {
        match self {
            Marginal::Gaussian(g) => {
                -0.5 * (g.dim() as f64 * 1.837_877_066_409_345_5 + g.cholesky().log_det() + delta)
            }
            Marginal::Student(t) => t.logpdf_from_delta(delta),
        }
    }
}

/// Linear conditional law of `y` given `x`: Gaussian when `dof` is absent, Student-t otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub map: LinearMap,
    /// `σ²_ε` (Gaussian) or the squared scale `σ²` (Student-t).
    pub noise_var: f64,
    pub dof: Option<f64>,
}

impl Conditional {
    pub fn gaussian(map: LinearMap, noise_var: f64) -> Self {
        Self { map, noise_var, dof: None }
    }

    pub fn student(map: LinearMap, noise_var: f64, dof: f64) -> Self {
        Self { map, noise_var, dof: Some(dof) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub x_marginal: Option<Marginal>,
    pub y_conditional: Conditional,
}

impl Component {
    /// Mean vector and covariance of `z = (x, y)` implied by this component
    /// (Student-t scales converted to covariances by `ν/(ν−2)` when `ν > 2`).
    pub fn joint_moments(&self, variant: Variant) -> Result<GaussianParams> {
        let marginal = self
            .x_marginal
            .as_ref()
            .ok_or_else(|| CwmError::InvalidInput("component has no covariate law".into()))?;
        let d = marginal.dim();
        let inflate = |dof: Option<f64>| match dof {
            Some(v) if v > 2.0 => v / (v - 2.0),
            _ => 1.0,
        };
        let (x_factor, y_factor) = match variant {
            // the stored pieces are the factorization of one joint t; one factor for all of it
            Variant::Fmt => {
                let f = inflate(marginal.dof());
                (f, f)
            }
            _ => (inflate(marginal.dof()), inflate(self.y_conditional.dof)),
        };
        let s: Vec<f64> = marginal.matrix().iter().map(|v| v * x_factor).collect();
        let b = &self.y_conditional.map.slope;
        let noise = self.y_conditional.noise_var * y_factor;
        Ok(compose_joint(marginal.center(), &s, d, &self.y_conditional.map, noise, b))
            .and_then(|(m, c)| GaussianParams::new(m, c))
    }
}

fn compose_joint(mu: &[f64], s: &[f64], d: usize, map: &LinearMap, noise_var: f64, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = d + 1;
    let sb = linalg::mat_vec(s, d, d, b);
    let mut mean = mu.to_vec();
    mean.push(map.eval(mu));
    let mut cov = vec![0.0; q * q];
    for i in 0..d {
        for j in 0..d {
            cov[i * q + j] = s[i * d + j];
        }
        cov[i * q + d] = sb[i];
        cov[d * q + i] = sb[i];
    }
    cov[d * q + d] = noise_var + linalg::dot(b, &sb);
    (mean, cov)
}

/// Multinomial-logistic gating coefficients for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub w: Vec<f64>,
    pub w0: f64,
}

impl Gate {
    pub fn zero(d: usize) -> Self {
        Self { w: vec![0.0; d], w0: 0.0 }
    }

    #[inline]
    pub fn eta(&self, x: &[f64]) -> f64 {
        self.w0 + linalg::dot(&self.w, x)
    }
}

/// Per-component pieces of one evaluation, shared with the fitting code.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TermParts {
    pub log_term: f64,
    pub delta_x: f64,
    pub resid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct CwmModel {
    variant: Variant,
    d: usize,
    components: Vec<Component>,
    gating: Option<Vec<Gate>>,
}

impl CwmModel {
    pub fn new(variant: Variant, components: Vec<Component>, gating: Option<Vec<Gate>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| CwmError::InvalidParameter("a model needs at least one component".into()))?;
        let d = first.y_conditional.map.dim();
        if d == 0 {
            return Err(CwmError::InvalidParameter("predictor dimension must be at least 1".into()));
        }
        let mut weight_sum = 0.0;
        for (g, c) in components.iter().enumerate() {
            let cond = &c.y_conditional;
            if cond.map.dim() != d {
                return Err(CwmError::DimensionMismatch { expected: d, found: cond.map.dim() });
            }
            if !(cond.noise_var > 0.0) || !cond.noise_var.is_finite() {
                return Err(CwmError::InvalidParameter(format!("component {g}: noise variance must be positive")));
            }
            if cond.map.slope.iter().any(|v| !v.is_finite()) || !cond.map.intercept.is_finite() {
                return Err(CwmError::InvalidParameter(format!("component {g}: non-finite regression coefficients")));
            }
            if let Some(z) = cond.dof {
                if !(z > 0.0) || !z.is_finite() {
                    return Err(CwmError::InvalidParameter(format!("component {g}: conditional dof must be positive")));
                }
            }
            if variant != Variant::Fmrc && !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(CwmError::InvalidParameter(format!("component {g}: weight must lie in (0, 1]")));
            }
            weight_sum += c.weight;
            if let Some(m) = &c.x_marginal {
                if m.dim() != d {
                    return Err(CwmError::DimensionMismatch { expected: d, found: m.dim() });
                }
            }
            let shape_ok = match variant {
                Variant::GaussianCwm | Variant::Fmg => {
                    matches!(c.x_marginal, Some(Marginal::Gaussian(_))) && cond.dof.is_none()
                }
                Variant::TCwm => matches!(c.x_marginal, Some(Marginal::Student(_))) && cond.dof.is_some(),
                Variant::Fmt => match (&c.x_marginal, cond.dof) {
                    (Some(Marginal::Student(t)), Some(z)) => (z - (t.dof() + d as f64)).abs() <= 1e-9 * z,
                    _ => false,
                },
                Variant::Fmr | Variant::Fmrc => c.x_marginal.is_none() && cond.dof.is_none(),
            };
            if !shape_ok {
                return Err(CwmError::InvalidParameter(format!(
                    "component {g} does not have the shape required by variant {variant}"
                )));
            }
        }
        if variant != Variant::Fmrc && (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL * components.len() as f64 {
            return Err(CwmError::InvalidParameter(format!("mixing weights sum to {weight_sum}, expected 1")));
        }
        match (&gating, variant) {
            (Some(gates), Variant::Fmrc) => {
                if gates.len() != components.len() {
                    return Err(CwmError::DimensionMismatch { expected: components.len(), found: gates.len() });
                }
                if gates.iter().any(|gt| gt.w.len() != d) {
                    return Err(CwmError::InvalidParameter("gating coefficient length must equal d".into()));
                }
                if gates[0].w0 != 0.0 || gates[0].w.iter().any(|v| *v != 0.0) {
                    return Err(CwmError::InvalidParameter("the first component is the gating baseline and must be zero".into()));
                }
                if gates.iter().any(|gt| !gt.w0.is_finite() || gt.w.iter().any(|v| !v.is_finite())) {
                    return Err(CwmError::InvalidParameter("non-finite gating coefficients".into()));
                }
            }
            (None, Variant::Fmrc) => return Err(CwmError::InvalidParameter("fmrc requires gating parameters".into())),
            (Some(_), _) => return Err(CwmError::InvalidParameter("gating parameters are only allowed for fmrc".into())),
            (None, _) => {}
        }
        Ok(Self { variant, d, components, gating })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Predictor dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn gating(&self) -> Option<&[Gate]> {
        self.gating.as_deref()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(CwmError::DimensionMismatch { expected: self.d, found: x.len() });
        }
        Ok(())
    }

    /// Fills `out[g]` with `ln` of gating probabilities (fmrc only).
    pub(crate) fn gate_log_probs(&self, x: &[f64], out: &mut [f64]) {
        if let Some(gates) = &self.gating {
            for (o, gt) in out.iter_mut().zip(gates) {
                *o = gt.eta(x);
            }
            let lse = log_sum_exp(out);
            out.iter_mut().for_each(|v| *v -= lse);
        }
    }

    #[inline]
    pub(crate) fn component_parts(&self, g: usize, x: &[f64], y: f64, log_mix: f64) -> TermParts {
        let c = &self.components[g];
        let cond = &c.y_conditional;
        let mean = cond.map.eval(x);
        let resid = y - mean;
        let mut log_term = log_mix;
        let mut delta_x = 0.0;
        if let Some(m) = &c.x_marginal {
            delta_x = m.mahalanobis_unchecked(x);
            log_term += m.logpdf_from_delta(delta_x);
        }
        log_term += match (self.variant, cond.dof) {
            (Variant::Fmt, Some(z)) => {
                let nu = z - self.d as f64;
                let s2 = cond.noise_var * (nu + delta_x) / z;
                student_logpdf_1d(y, mean, s2, z)
            }
            (_, Some(z)) => student_logpdf_1d(y, mean, cond.noise_var, z),
            (_, None) => normal_logpdf_1d(y, mean, cond.noise_var),
        };
        TermParts { log_term, delta_x, resid }
    }

    /// `ln(π_g p(x|g) p(y|x,g))` (or the gated / conditional-only analogue) for every component.
    pub fn log_terms(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut out = vec![0.0; self.components.len()];
        self.log_terms_into(x, y, &mut out);
        Ok(out)
    }

    pub(crate) fn log_terms_into(&self, x: &[f64], y: f64, out: &mut [f64]) {
        if self.gating.is_some() {
            self.gate_log_probs(x, out);
        } else {
            for (o, c) in out.iter_mut().zip(&self.components) {
                *o = c.weight.ln();
            }
        }
        for g in 0..self.components.len() {
            out[g] = self.component_parts(g, x, y, out[g]).log_term;
        }
    }

    /// Log of the model density at `(x, y)`; for fmr/fmrc this is `ln f(y | x)`.
    pub fn joint_logpdf(&self, x: &[f64], y: f64) -> Result<f64> {
        Ok(log_sum_exp(&self.log_terms(x, y)?))
    }

    /// Posterior membership probabilities `p(Ω_g | x, y)`.
    pub fn posterior(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let mut t = self.log_terms(x, y)?;
        normalize_log(&mut t);
        Ok(t)
    }

    /// Maximum-posterior component (0-based) per row; ties go to the lowest index.
    pub fn classify(&self, data: &Dataset) -> Result<Vec<usize>> {
        self.check_x(&vec![0.0; data.d()])?;
        let mut buf = vec![0.0; self.components.len()];
        Ok((0..data.n())
            .map(|i| {
                self.log_terms_into(data.x_row(i), data.y()[i], &mut buf);
                argmax(&buf)
            })
            .collect())
    }

    /// Observed-data log-likelihood of a dataset.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        self.check_x(&vec![0.0; data.d()])?;
        let mut buf = vec![0.0; self.components.len()];
        Ok((0..data.n())
            .map(|i| {
                self.log_terms_into(data.x_row(i), data.y()[i], &mut buf);
                log_sum_exp(&buf)
            })
            .sum())
    }

    /// Returns a copy with components reordered so that new component `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let g = self.components.len();
        let mut seen = vec![false; g];
        if perm.len() != g || perm.iter().any(|&p| p >= g || std::mem::replace(&mut seen[p], true)) {
            return Err(CwmError::InvalidParameter("not a permutation of the components".into()));
        }
        let components = perm.iter().map(|&p| self.components[p].clone()).collect();
        let gating = self.gating.as_ref().map(|gates| {
            let base = &gates[perm[0]];
            perm.iter()
                .map(|&p| Gate {
                    w: gates[p].w.iter().zip(&base.w).map(|(a, b)| a - b).collect(),
                    w0: gates[p].w0 - base.w0,
                })
                .collect()
        });
        Self::new(self.variant, components, gating)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m.is_infinite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Turns log-weights into probabilities in place and returns their log-sum-exp.
pub(crate) fn normalize_log(v: &mut [f64]) -> f64 {
    let lse = log_sum_exp(v);
    v.iter_mut().for_each(|x| *x = (*x - lse).exp());
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    lse
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Group membership of one row: a 0-based group index or the noise class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Group(usize),
    Noise,
}

impl Label {
    pub fn group(self) -> Option<usize> {
        match self {
            Label::Group(g) => Some(g),
            Label::Noise => None,
        }
    }
}

/// Text form: 1-based group numbers and `noise`.
impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Group(g) => write!(f, "{}", g + 1),
            Label::Noise => f.write_str("noise"),
        }
    }
}

impl FromStr for Label {
    type Err = CwmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("noise") {
            return Ok(Label::Noise);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Label::Group(k - 1)),
            _ => Err(CwmError::InvalidInput(format!("invalid label '{s}'"))),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `N` observations of `(x ∈ ℝᵈ, y ∈ ℝ)` with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    d: usize,
    y: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl Dataset {
    /// `x` is row-major `N × d`.
    pub fn new(x: Vec<f64>, d: usize, y: Vec<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(CwmError::InvalidInput("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(CwmError::InvalidInput("dataset needs at least one predictor".into()));
        }
        if x.len() != n * d {
            return Err(CwmError::DimensionMismatch { expected: n * d, found: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(CwmError::InvalidInput(format!("non-finite predictor at row {}", i / d)));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(CwmError::InvalidInput(format!("non-finite response at row {i}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(CwmError::DimensionMismatch { expected: n, found: l.len() });
            }
        }
        Ok(Self { x, d, y, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(CwmError::InvalidInput("ragged predictor rows".into()));
        }
        Self::new(rows.concat(), d, y, labels)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// `(x, y)` of row `i` as one vector.
    pub fn z_row(&self, i: usize) -> Vec<f64> {
        let mut z = self.x_row(i).to_vec();
        z.push(self.y[i]);
        z
    }

    pub fn with_labels(mut self, labels: Option<Vec<Label>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n() {
                return Err(CwmError::DimensionMismatch { expected: self.n(), found: l.len() });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(CwmError::InvalidInput(format!("row index {i} out of range")));
            }
            x.extend_from_slice(self.x_row(i));
            y.push(self.y[i]);
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(x, self.d, y, labels)
    }
}

// ---------------------------------------------------------------------------
// Nesting maps
// ---------------------------------------------------------------------------

/// Converts one joint Gaussian over `z = (x, y)` (response last) into the
/// equivalent linear-Gaussian CWM component: `b = Σ_xx⁻¹Σ_xy`,
/// `b₀ = μ_y − b'μ_x`, `σ²_ε = σ_yy − Σ_yx Σ_xx⁻¹ Σ_xy`.
pub fn fmg_to_cwm(joint: &GaussianParams, weight: f64) -> Result<Component> {
    let q = joint.dim();
    if q < 2 {
        return Err(CwmError::InvalidParameter("joint law must have dimension d+1 >= 2".into()));
    }
    let (marginal, map, noise_var) = split_gaussian_like(joint.mean(), joint.cov(), q)?;
    Ok(Component {
        weight,
        x_marginal: Some(Marginal::Gaussian(marginal)),
        y_conditional: Conditional::gaussian(map, noise_var),
    })
}

/// Builds an `fmg` model from joint Gaussians.
pub fn fmg_model(weights: &[f64], joints: &[GaussianParams]) -> Result<CwmModel> {
    if weights.len() != joints.len() {
        return Err(CwmError::DimensionMismatch { expected: joints.len(), found: weights.len() });
    }
    let comps = weights.iter().zip(joints).map(|(&w, j)| fmg_to_cwm(j, w)).collect::<Result<_>>()?;
    CwmModel::new(Variant::Fmg, comps, None)
}

/// Converts a joint Student-t over `z = (x, y)` into its `fmt` component form.
pub fn fmt_component(joint: &StudentParams, weight: f64) -> Result<Component> {
    let q = joint.dim();
    if q < 2 {
        return Err(CwmError::InvalidParameter("joint law must have dimension d+1 >= 2".into()));
    }
    let (m, map, noise_var) = split_gaussian_like(joint.location(), joint.scale(), q)?;
    let nu = joint.dof();
    let marginal = StudentParams::new(m.mean().to_vec(), m.cov().to_vec(), nu)?;
    Ok(Component {
        weight,
        x_marginal: Some(Marginal::Student(marginal)),
        y_conditional: Conditional::student(map, noise_var, nu + (q - 1) as f64),
    })
}

pub fn fmt_model(weights: &[f64], joints: &[StudentParams]) -> Result<CwmModel> {
    if weights.len() != joints.len() {
        return Err(CwmError::DimensionMismatch { expected: joints.len(), found: weights.len() });
    }
    let comps = weights.iter().zip(joints).map(|(&w, j)| fmt_component(j, w)).collect::<Result<_>>()?;
    CwmModel::new(Variant::Fmt, comps, None)
}

fn split_gaussian_like(mean: &[f64], cov: &[f64], q: usize) -> Result<(GaussianParams, LinearMap, f64)> {
    let d = q - 1;
    let mut sxx = vec![0.0; d * d];
    let mut sxy = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            sxx[i * d + j] = cov[i * q + j];
        }
        sxy[i] = cov[i * q + d];
    }
    let chol = Cholesky::factor(&sxx, d)?;
    let b = chol.solve(&sxy);
    let mu_x = &mean[..d];
    let b0 = mean[d] - linalg::dot(&b, mu_x);
    let noise_var = cov[d * q + d] - linalg::dot(&sxy, &b);
    if !(noise_var > 0.0) {
        return Err(CwmError::NotPositiveDefinite { row: d, pivot: noise_var });
    }
    Ok((GaussianParams::new(mu_x.to_vec(), sxx)?, LinearMap::new(b, b0), noise_var))
}

/// Marginal and conditional laws of a partitioned multivariate t.
#[derive(Debug, Clone)]
pub struct TDecomposition {
    pub marginal: StudentParams,
    q1: usize,
    q2: usize,
    mu2: Vec<f64>,
    /// `Σ21 Σ11⁻¹`, row-major `q2 × q1`.
    coef: Vec<f64>,
    /// `Σ_{2|1} = Σ22 − Σ21 Σ11⁻¹ Σ12`.
    schur: Vec<f64>,
}

impl TDecomposition {
    pub fn regression_coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn schur_complement(&self) -> &[f64] {
        &self.schur
    }

    /// Law of `z₂ | z₁`: `t(μ_{2|1}(z₁), Σ_{2|1}·(ν+δ₁)/(ν+q₁), ν+q₁)`.
    pub fn conditional(&self, z1: &[f64]) -> Result<StudentParams> {
        if z1.len() != self.q1 {
            return Err(CwmError::DimensionMismatch { expected: self.q1, found: z1.len() });
        }
        let nu = self.marginal.dof();
        let delta = self.marginal.mahalanobis_unchecked(z1);
        let diff: Vec<f64> = z1.iter().zip(self.marginal.location()).map(|(a, b)| a - b).collect();
        let shift = linalg::mat_vec(&self.coef, self.q2, self.q1, &diff);
        let loc = self.mu2.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let factor = (nu + delta) / (nu + self.q1 as f64);
        let scale = self.schur.iter().map(|v| v * factor).collect();
        StudentParams::new(loc, scale, nu + self.q1 as f64)
    }
}

/// Splits `t_q(μ, Σ, ν)` after the first `q1` coordinates.
pub fn t_conditional_decompose(joint: &StudentParams, q1: usize) -> Result<TDecomposition> {
    let q = joint.dim();
    if q1 == 0 || q1 >= q {
        return Err(CwmError::InvalidParameter(format!("split must satisfy 1 <= q1 < {q}, got {q1}")));
    }
    let q2 = q - q1;
    let s = joint.scale();
    let block = |r0: usize, c0: usize, nr: usize, nc: usize| {
        let mut out = vec![0.0; nr * nc];
        for i in 0..nr {
            for j in 0..nc {
                out[i * nc + j] = s[(r0 + i) * q + c0 + j];
            }
        }
        out
    };
    let s11 = block(0, 0, q1, q1);
    let s21 = block(q1, 0, q2, q1);
    let s22 = block(q1, q1, q2, q2);
    let chol11 = Cholesky::factor(&s11, q1)?;
    let mut coef = vec![0.0; q2 * q1];
    for r in 0..q2 {
        // row r of Σ21 Σ11⁻¹ solves Σ11 c = Σ12[:, r]
        let c = chol11.solve(&s21[r * q1..(r + 1) * q1]);
        coef[r * q1..(r + 1) * q1].copy_from_slice(&c);
    }
    let mut schur = s22;
    for i in 0..q2 {
        for j in 0..q2 {
            schur[i * q2 + j] -= linalg::dot(&coef[i * q1..(i + 1) * q1], &s21[j * q1..(j + 1) * q1]);
        }
    }
    let marginal = StudentParams::new(joint.location()[..q1].to_vec(), s11, joint.dof())?;
    Ok(TDecomposition { marginal, q1, q2, mu2: joint.location()[q1..].to_vec(), coef, schur })
}

fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// True when every covariate law is the same, i.e. the model collapses to a
/// mixture of regressions with the same posteriors.
pub fn check_fmr_reduction(model: &CwmModel) -> Result<bool> {
    if model.variant != Variant::GaussianCwm {
        return Err(CwmError::WrongVariant { expected: "gaussian_cwm", found: model.variant });
    }
    let first = model.components[0].x_marginal.as_ref().expect("validated");
    Ok(model.components.iter().all(|c| {
        let m = c.x_marginal.as_ref().expect("validated");
        all_close(m.center(), first.center(), NESTING_TOL) && all_close(m.matrix(), first.matrix(), NESTING_TOL)
    }))
}

/// Drops the covariate laws, keeping weights and regressions.
pub fn strip_to_fmr(model: &CwmModel) -> Result<CwmModel> {
    if !matches!(model.variant, Variant::GaussianCwm | Variant::Fmg) {
        return Err(CwmError::WrongVariant { expected: "gaussian_cwm", found: model.variant });
    }
    let comps = model
        .components
        .iter()
        .map(|c| Component { weight: c.weight, x_marginal: None, y_conditional: c.y_conditional.clone() })
        .collect();
    CwmModel::new(Variant::Fmr, comps, None)
}

/// Gating coefficients reproducing `p(Ω_g | x)` of a homoscedastic, equal-weight
/// Gaussian CWM, against component 0 as baseline:
/// `w_g = Σ⁻¹(μ_g − μ₀)`, `w_g0 = −½(μ_g + μ₀)'Σ⁻¹(μ_g − μ₀)`.
pub fn cwm_to_fmrc_gating(model: &CwmModel) -> Result<Vec<Gate>> {
    if model.variant != Variant::GaussianCwm {
        return Err(CwmError::WrongVariant { expected: "gaussian_cwm", found: model.variant });
    }
    let base = model.components[0].x_marginal.as_ref().expect("validated");
    let w_first = model.components[0].weight;
    for c in &model.components {
        let m = c.x_marginal.as_ref().expect("validated");
        if !all_close(m.matrix(), base.matrix(), NESTING_TOL) {
            return Err(CwmError::InvalidInput("gating conversion requires a common covariance matrix".into()));
        }
        if (c.weight - w_first).abs() > WEIGHT_SUM_TOL {
            return Err(CwmError::InvalidInput("gating conversion requires equal mixing weights".into()));
        }
    }
    let chol = base.cholesky();
    let mu0 = base.center();
    Ok(model
        .components
        .iter()
        .map(|c| {
            let mu = c.x_marginal.as_ref().expect("validated").center();
            let diff: Vec<f64> = mu.iter().zip(mu0).map(|(a, b)| a - b).collect();
            let w = chol.solve(&diff);
            let sum: Vec<f64> = mu.iter().zip(mu0).map(|(a, b)| a + b).collect();
            Gate { w0: -0.5 * linalg::dot(&sum, &w), w }
        })
        .collect())
}

/// The fmrc model sharing this model's regressions, gated by [`cwm_to_fmrc_gating`].
pub fn to_fmrc(model: &CwmModel) -> Result<CwmModel> {
    let gates = cwm_to_fmrc_gating(model)?;
    let comps = model
        .components
        .iter()
        .map(|c| Component { weight: c.weight, x_marginal: None, y_conditional: c.y_conditional.clone() })
        .collect();
    CwmModel::new(Variant::Fmrc, comps, Some(gates))
}

/// True when all conditional laws coincide, so that `f(y | x)` is a single regression.
pub fn check_degenerate_conditional(model: &CwmModel) -> bool {
    let first = &model.components[0].y_conditional;
    model.components.iter().all(|c| {
        let k = &c.y_conditional;
        all_close(&k.map.slope, &first.map.slope, NESTING_TOL)
            && (k.map.intercept - first.map.intercept).abs() <= NESTING_TOL
            && (k.noise_var - first.noise_var).abs() <= NESTING_TOL
            && match (k.dof, first.dof) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() <= NESTING_TOL,
                _ => false,
            }
    })
}

// ---------------------------------------------------------------------------
// JSON form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MarginalJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dof: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConditionalJson {
    slope: Vec<f64>,
    intercept: f64,
    noise_var: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dof: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_marginal: Option<MarginalJson>,
    y_conditional: ConditionalJson,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    variant: Variant,
    d: usize,
    #[serde(rename = "G")]
    g: usize,
    components: Vec<ComponentJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gating: Option<Vec<Gate>>,
}

impl From<CwmModel> for ModelJson {
    fn from(m: CwmModel) -> Self {
        let d = m.d;
        ModelJson {
            variant: m.variant,
            d,
            g: m.components.len(),
            components: m
                .components
                .into_iter()
                .map(|c| ComponentJson {
                    weight: c.weight,
                    x_marginal: c.x_marginal.map(|x| MarginalJson {
                        mean: x.center().to_vec(),
                        cov: linalg::to_rows(x.matrix(), d),
                        dof: x.dof(),
                    }),
                    y_conditional: ConditionalJson {
                        slope: c.y_conditional.map.slope,
                        intercept: c.y_conditional.map.intercept,
                        noise_var: c.y_conditional.noise_var,
                        dof: c.y_conditional.dof,
                    },
                })
                .collect(),
            gating: m.gating,
        }
    }
}

impl TryFrom<ModelJson> for CwmModel {
    type Error = CwmError;

    fn try_from(j: ModelJson) -> Result<Self> {
        if j.g != j.components.len() {
            return Err(CwmError::InvalidInput(format!("G = {} but {} components listed", j.g, j.components.len())));
        }
        let comps = j
            .components
            .into_iter()
            .map(|c| {
                let x_marginal = c
                    .x_marginal
                    .map(|m| -> Result<Marginal> {
                        Ok(match m.dof {
                            None => Marginal::Gaussian(GaussianParams::from_rows(m.mean, &m.cov)?),
                            Some(v) => Marginal::Student(StudentParams::from_rows(m.mean, &m.cov, v)?),
                        })
                    })
                    .transpose()?;
                Ok(Component {
                    weight: c.weight,
                    x_marginal,
                    y_conditional: Conditional {
                        map: LinearMap::new(c.y_conditional.slope, c.y_conditional.intercept),
                        noise_var: c.y_conditional.noise_var,
                        dof: c.y_conditional.dof,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = CwmModel::new(j.variant, comps, j.gating)?;
        if model.d != j.d {
            return Err(CwmError::DimensionMismatch { expected: j.d, found: model.d });
        }
        Ok(model)
    }
}
