//! Three-step robust clustering: flag outliers with a chi-squared rule on a
//! heavy-tailed fit, refit on the retained rows, then classify every row into
//! `G` groups or noise.
//!
//! Row indices are 0-based throughout.

use serde::{Deserialize, Serialize};

use crate::densities::GaussianParams;
use crate::em::{fit, FitConfig, FitResult};
use crate::error::{CwmError, Result};
use crate::metrics::misclassification;
use crate::model::{CwmModel, Dataset, Label, Marginal, Variant};
use crate::special::chi_sq_quantile;

/// Which vector the distance rule is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSpace {
    /// `z = (x, y)` with `q = d + 1`.
    #[default]
    Joint,
    /// `x` alone with `q = d`.
    XOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub alpha: f64,
    pub detector_variant: Variant,
    pub refit_variant: Variant,
    pub fit_config: FitConfig,
    pub rule_space: RuleSpace,
    /// Re-test retained rows against the refit.
    pub recheck: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self::new(Variant::TCwm, FitConfig::new(2, Variant::TCwm))
    }
}

impl RobustConfig {
    pub fn new(refit_variant: Variant, fit_config: FitConfig) -> Self {
        Self {
            alpha: 0.05,
            detector_variant: Variant::TCwm,
            refit_variant,
            fit_config,
            rule_space: RuleSpace::Joint,
            recheck: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        for v in [self.detector_variant, self.refit_variant] {
            if !matches!(v, Variant::TCwm | Variant::GaussianCwm) {
                return Err(CwmError::InvalidParameter(format!("robust pipeline needs gaussian_cwm or t_cwm, got {v}")));
            }
        }
        self.fit_config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustResult {
    /// Rows flagged in step 1.
    pub outlier_indices: Vec<usize>,
    /// Retained rows moved to noise by the step-3 re-check.
    pub recheck_indices: Vec<usize>,
    pub trimmed_fit: FitResult,
    /// Dataset rows the refit was computed on, in order.
    pub retained_indices: Vec<usize>,
    pub final_labels: Vec<Label>,
    pub confusion: Option<Vec<Vec<usize>>>,
    pub misclassification_rate: Option<f64>,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CwmError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `χ²_{1−α}(q)`; infinite when `1 − α` rounds to 1.
pub fn rule_threshold(alpha: f64, q: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if 1.0 - alpha == 1.0 {
        return Ok(f64::INFINITY);
    }
    chi_sq_quantile(1.0 - alpha, q as u32)
}

/// Per-group location and covariance-form matrix the rule measures against.
fn rule_laws(model: &CwmModel, space: RuleSpace, warnings: &mut Vec<String>) -> Result<Vec<GaussianParams>> {
    model
        .components()
        .iter()
        .enumerate()
        .map(|(g, c)| {
            let m = c.x_marginal.as_ref().ok_or_else(|| {
                CwmError::WrongVariant { expected: "a variant with covariate laws", found: model.variant() }
            })?;
            for dof in [m.dof(), c.y_conditional.dof].into_iter().flatten() {
                if dof <= 2.0 {
                    warnings.push(format!("group {}: dof {dof:.3} <= 2, scale used without covariance conversion", g + 1));
                }
            }
            match space {
                RuleSpace::Joint => c.joint_moments(model.variant()),
                RuleSpace::XOnly => {
                    let f = match m {
                        Marginal::Student(t) if t.dof() > 2.0 => t.dof() / (t.dof() - 2.0),
                        _ => 1.0,
                    };
                    GaussianParams::new(m.center().to_vec(), m.matrix().iter().map(|v| v * f).collect())
                }
            }
        })
        .collect()
}

fn rule_vector(data: &Dataset, i: usize, space: RuleSpace) -> Vec<f64> {
    match space {
        RuleSpace::Joint => data.z_row(i),
        RuleSpace::XOnly => data.x_row(i).to_vec(),
    }
}

fn rule_q(d: usize, space: RuleSpace) -> usize {
    match space {
        RuleSpace::Joint => d + 1,
        RuleSpace::XOnly => d,
    }
}

/// Rows `n` with `δ(z_n; μ̂_g, Σ̂_g) > χ²_{1−α}(q)` for the group `g` they are assigned to.
pub fn detect_outliers_with(
    data: &Dataset,
    model: &CwmModel,
    assignment: &[usize],
    alpha: f64,
    space: RuleSpace,
) -> Result<Vec<usize>> {
    if assignment.len() != data.n() {
        return Err(CwmError::DimensionMismatch { expected: data.n(), found: assignment.len() });
    }
    let threshold = rule_threshold(alpha, rule_q(data.d(), space))?;
    let laws = rule_laws(model, space, &mut Vec::new())?;
    flagged(data, &laws, assignment, threshold, space, 0..data.n())
}

fn flagged(
    data: &Dataset,
    laws: &[GaussianParams],
    assignment: &[usize],
    threshold: f64,
    space: RuleSpace,
    rows: impl Iterator<Item = usize>,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in rows {
        let g = assignment[i];
        let law = laws.get(g).ok_or_else(|| CwmError::InvalidInput(format!("row {i}: group {g} out of range")))?;
        let z = rule_vector(data, i, space);
        if crate::densities::mahalanobis_sq(&z, law)? > threshold {
            out.push(i);
        }
    }
    Ok(out)
}

/// The rule on the joint vector using a fit's hard classification.
pub fn detect_outliers(data: &Dataset, fit: &FitResult, alpha: f64) -> Result<Vec<usize>> {
    detect_outliers_with(data, &fit.model, &fit.classification, alpha, RuleSpace::Joint)
}

/// Runs the three steps with a fresh detector fit on the full data.
pub fn robust_fit(data: &Dataset, config: &RobustConfig) -> Result<RobustResult> {
    config.validate()?;
    let detector_cfg = FitConfig { variant: config.detector_variant, ..config.fit_config.clone() };
    let detector = fit(data, &detector_cfg)?;
    robust_fit_with_detector(data, config, &detector)
}

/// Steps 2 and 3 given an existing step-1 fit on the full data.
pub fn robust_fit_with_detector(data: &Dataset, config: &RobustConfig, detector: &FitResult) -> Result<RobustResult> {
    config.validate()?;
    let (n, d, g) = (data.n(), data.d(), config.fit_config.groups);
    let space = config.rule_space;
    let threshold = rule_threshold(config.alpha, rule_q(d, space))?;
    let mut warnings = Vec::new();
    let laws = rule_laws(&detector.model, space, &mut warnings)?;
    let outliers = flagged(data, &laws, &detector.classification, threshold, space, 0..n)?;

    let mut is_out = vec![false; n];
    outliers.iter().for_each(|&i| is_out[i] = true);
    let retained: Vec<usize> = (0..n).filter(|&i| !is_out[i]).collect();
    let needed = g * (d + 2);
    if retained.len() < needed {
        return Err(CwmError::Degenerate(format!(
            "only {} rows remain after trimming {} outliers; at least G(d+2) = {needed} are needed",
            retained.len(),
            outliers.len()
        )));
    }
    let trimmed = data.subset(&retained)?;
    let refit_cfg = FitConfig { variant: config.refit_variant, ..config.fit_config.clone() };
    let trimmed_fit = fit(&trimmed, &refit_cfg)?;

    let mut final_labels = vec![Label::Noise; n];
    for (j, &i) in retained.iter().enumerate() {
        final_labels[i] = Label::Group(trimmed_fit.classification[j]);
    }
    let recheck = if config.recheck {
        let refit_laws = rule_laws(&trimmed_fit.model, space, &mut warnings)?;
        let local = flagged(&trimmed, &refit_laws, &trimmed_fit.classification, threshold, space, 0..trimmed.n())?;
        local.into_iter().map(|j| retained[j]).collect()
    } else {
        Vec::new()
    };
    recheck.iter().for_each(|&i: &usize| final_labels[i] = Label::Noise);

    let mis = match data.labels() {
        Some(truth) => Some(misclassification(truth, &final_labels, g)?),
        None => None,
    };
    warnings.sort();
    warnings.dedup();
    Ok(RobustResult {
        outlier_indices: outliers,
        recheck_indices: recheck,
        trimmed_fit,
        retained_indices: retained,
        final_labels,
        misclassification_rate: mis.as_ref().map(|m| m.eta),
        confusion: mis.map(|m| m.confusion),
        threshold,
        warnings,
    })
}
