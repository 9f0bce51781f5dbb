//! Conditional-maximization update of Student-t degrees of freedom.

use crate::error::{CwmError, Result};
use crate::special::digamma;

pub const DOF_MIN: f64 = 0.5;
pub const DOF_MAX: f64 = 200.0;

/// Weighted E-step statistics for one t law: `Σ τ`, `Σ τ E[U]` and `Σ τ E[ln U]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofStats {
    pub weight_sum: f64,
    pub sum_u: f64,
    pub sum_log_u: f64,
}

impl DofStats {
    /// Statistics from responsibilities `tau` and latent weights `u = (ν+p)/(ν+δ)`
    /// computed under the current dof `dof_old` of a `p`-variate law.
    pub fn from_weights(tau: impl Iterator<Item = f64>, u: impl Iterator<Item = f64>, dof_old: f64, p: usize) -> Self {
        let half = 0.5 * (dof_old + p as f64);
        let correction = digamma(half) - half.ln();
        let mut s = DofStats { weight_sum: 0.0, sum_u: 0.0, sum_log_u: 0.0 };
        for (t, u) in tau.zip(u) {
            s.weight_sum += t;
            s.sum_u += t * u;
            s.sum_log_u += t * (u.ln() + correction);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofEstimate {
    pub value: f64,
    /// True when the root lies outside `[DOF_MIN, DOF_MAX]` and the bound was returned.
    pub at_boundary: bool,
}

/// Root in `ν` of `ln(ν/2) − ψ(ν/2) + 1 + (Σ τ(E[ln U] − E[U]))/Σ τ = 0` on `[0.5, 200]` by bisection.
pub fn estimate_dof(stats: &DofStats) -> Result<DofEstimate> {
    if !(stats.weight_sum > 0.0) || !stats.sum_u.is_finite() || !stats.sum_log_u.is_finite() || stats.sum_u < 0.0 {
        return Err(CwmError::InvalidInput("dof statistics need positive weight and finite sums".into()));
    }
    let s = (stats.sum_log_u - stats.sum_u) / stats.weight_sum;
    let f = |nu: f64| (0.5 * nu).ln() - digamma(0.5 * nu) + 1.0 + s;
    // f decreases in ν
    let (f_lo, f_hi) = (f(DOF_MIN), f(DOF_MAX));
    if f_hi >= 0.0 {
        return Ok(DofEstimate { value: DOF_MAX, at_boundary: true });
    }
    if f_lo <= 0.0 {
        return Ok(DofEstimate { value: DOF_MIN, at_boundary: true });
    }
    let (mut lo, mut hi) = (DOF_MIN, DOF_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(DofEstimate { value: 0.5 * (lo + hi), at_boundary: false })
}
