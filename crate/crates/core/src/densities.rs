//! Gaussian and Student-t log-densities, the Mahalanobis distance and the
//! parameter types they share.
//!
//! Every covariance (or Student-t scale) matrix is factorized once at
//! construction; evaluation never forms an inverse. All densities are returned
//! on the log scale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};
use crate::linalg::{self, Cholesky};
use crate::special::ln_gamma_pos;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean and symmetric positive-definite covariance of a multivariate normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Cholesky,
}

impl GaussianParams {
    /// `cov` is row-major `q × q` with `q = mean.len()`.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let q = mean.len();
        if cov.len() != q * q {
            return Err(CwmError::DimensionMismatch { expected: q * q, found: cov.len() });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(CwmError::InvalidParameter("mean has non-finite entries".into()));
        }
        let chol = Cholesky::factor(&cov, q)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn from_rows(mean: Vec<f64>, cov: &[Vec<f64>]) -> Result<Self> {
        let (c, _) = linalg::from_rows(cov)?;
        Self::new(mean, c)
    }

    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], vec![var])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub(crate) fn mahalanobis_unchecked(&self, z: &[f64]) -> f64 {
        mahalanobis_with(&self.chol, &self.mean, z)
    }

    pub(crate) fn logpdf_unchecked(&self, z: &[f64]) -> f64 {
        let q = self.dim() as f64;
        -0.5 * (q * LN_2PI + self.chol.log_det() + self.mahalanobis_unchecked(z))
    }
}

/// Location, scale matrix and degrees of freedom of a multivariate Student-t law.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    location: Vec<f64>,
    scale: Vec<f64>,
    dof: f64,
    chol: Cholesky,
    // ln Γ((ν+q)/2) − ln Γ(ν/2) + (ν/2) ln ν − (q/2) ln π − ½ ln|Σ|
    log_norm: f64,
}

impl StudentParams {
    pub fn new(location: Vec<f64>, scale: Vec<f64>, dof: f64) -> Result<Self> {
        let q = location.len();
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(CwmError::InvalidParameter(format!("degrees of freedom must be positive, got {dof}")));
        }
        if scale.len() != q * q {
            return Err(CwmError::DimensionMismatch { expected: q * q, found: scale.len() });
        }
        if location.iter().any(|v| !v.is_finite()) {
            return Err(CwmError::InvalidParameter("location has non-finite entries".into()));
        }
        let chol = Cholesky::factor(&scale, q)?;
        let log_norm = student_log_norm(q as f64, dof, chol.log_det());
        Ok(Self { location, scale, dof, chol, log_norm })
    }

    pub fn from_rows(location: Vec<f64>, scale: &[Vec<f64>], dof: f64) -> Result<Self> {
        let (s, _) = linalg::from_rows(scale)?;
        Self::new(location, s, dof)
    }

    pub fn univariate(location: f64, scale_var: f64, dof: f64) -> Result<Self> {
        Self::new(vec![location], vec![scale_var], dof)
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub(crate) fn mahalanobis_unchecked(&self, z: &[f64]) -> f64 {
        mahalanobis_with(&self.chol, &self.location, z)
    }

    pub(crate) fn logpdf_from_delta(&self, delta: f64) -> f64 {
        let q = self.dim() as f64;
        self.log_norm - 0.5 * (self.dof + q) * (self.dof + delta).ln()
    }

    pub(crate) fn logpdf_unchecked(&self, z: &[f64]) -> f64 {
        self.logpdf_from_delta(self.mahalanobis_unchecked(z))
    }
}

fn student_log_norm(q: f64, dof: f64, log_det: f64) -> f64 {
    ln_gamma_pos(0.5 * (dof + q)) - ln_gamma_pos(0.5 * dof) + 0.5 * dof * dof.ln() - 0.5 * q * PI.ln() - 0.5 * log_det
}

fn mahalanobis_with(chol: &Cholesky, center: &[f64], z: &[f64]) -> f64 {
    let n = center.len();
    if n <= 8 {
        let mut d = [0.0f64; 8];
        for i in 0..n {
            d[i] = z[i] - center[i];
        }
        chol.quad_form(&d[..n])
    } else {
        let d: Vec<f64> = z.iter().zip(center).map(|(a, b)| a - b).collect();
        chol.quad_form(&d)
    }
}

/// A law with a center and a factorized positive-definite matrix.
pub trait Elliptical {
    fn center(&self) -> &[f64];
    fn factor(&self) -> &Cholesky;
}

impl Elliptical for GaussianParams {
    fn center(&self) -> &[f64] {
        &self.mean
    }
    fn factor(&self) -> &Cholesky {
        &self.chol
    }
}

impl Elliptical for StudentParams {
    fn center(&self) -> &[f64] {
        &self.location
    }
    fn factor(&self) -> &Cholesky {
        &self.chol
    }
}

fn check_dim(expected: usize, z: &[f64]) -> Result<()> {
    if z.len() != expected {
        return Err(CwmError::DimensionMismatch { expected, found: z.len() });
    }
    Ok(())
}

/// Squared Mahalanobis distance `(z−μ)'Σ⁻¹(z−μ)`.
pub fn mahalanobis_sq<E: Elliptical + ?Sized>(z: &[f64], params: &E) -> Result<f64> {
    check_dim(params.center().len(), z)?;
    Ok(mahalanobis_with(params.factor(), params.center(), z))
}

pub fn gaussian_logpdf(z: &[f64], params: &GaussianParams) -> Result<f64> {
    check_dim(params.dim(), z)?;
    Ok(params.logpdf_unchecked(z))
}

pub fn student_logpdf(z: &[f64], params: &StudentParams) -> Result<f64> {
    check_dim(params.dim(), z)?;
    Ok(params.logpdf_unchecked(z))
}

/// Univariate normal log-density with variance `var`.
#[inline]
pub fn normal_logpdf_1d(z: f64, mean: f64, var: f64) -> f64 {
    let r = z - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Univariate Student-t log-density with squared scale `scale_var`.
#[inline]
pub fn student_logpdf_1d(z: f64, loc: f64, scale_var: f64, dof: f64) -> f64 {
    let r = z - loc;
    student_log_norm(1.0, dof, scale_var.ln()) - 0.5 * (dof + 1.0) * (dof + r * r / scale_var).ln()
}

/// Linear conditional mean `b'x + b₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl LinearMap {
    pub fn new(slope: Vec<f64>, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + linalg::dot(&self.slope, x)
    }

    pub fn dim(&self) -> usize {
        self.slope.len()
    }
}
