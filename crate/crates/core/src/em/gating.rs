//! Multinomial-logistic gating update for mixtures of regressions with concomitant
//! variables. Component 0 is the baseline with zero coefficients.

use crate::linalg::{self, Cholesky};
use crate::model::{log_sum_exp, Dataset, Gate};

pub const MAX_NEWTON_STEPS: usize = 25;
pub const HESSIAN_RIDGE: f64 = 1e-6;

fn objective(data: &Dataset, tau: &[f64], g: usize, theta: &[f64], eta: &mut [f64]) -> f64 {
    let d = data.d();
    let mut total = 0.0;
    for i in 0..data.n() {
        fill_eta(data.x_row(i), theta, g, d, eta);
        let lse = log_sum_exp(eta);
        for k in 0..g {
            total += tau[i * g + k] * (eta[k] - lse);
        }
    }
    total
}

fn fill_eta(x: &[f64], theta: &[f64], g: usize, d: usize, eta: &mut [f64]) {
    eta[0] = 0.0;
    for k in 1..g {
        let c = &theta[(k - 1) * (d + 1)..k * (d + 1)];
        eta[k] = c[0] + linalg::dot(&c[1..], x);
    }
}

/// Newton ascent of `Σ_n Σ_g τ_ng ln p_g(x_n)` from `start`, never accepting a step
/// that lowers the objective.
pub(crate) fn update_gating(data: &Dataset, tau: &[f64], g: usize, start: &[Gate]) -> Vec<Gate> {
    let d = data.d();
    let m = d + 1;
    let dim = (g - 1) * m;
    if dim == 0 {
        return vec![Gate::zero(d)];
    }
    let mut theta: Vec<f64> = start[1..]
        .iter()
        .flat_map(|gt| std::iter::once(gt.w0).chain(gt.w.iter().copied()))
        .collect();
    let mut eta = vec![0.0; g];
    let mut current = objective(data, tau, g, &theta, &mut eta);
    let mut grad = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    let mut xt = vec![0.0; m];
    for _ in 0..MAX_NEWTON_STEPS {
        grad.iter_mut().for_each(|v| *v = 0.0);
        hess.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..data.n() {
            let x = data.x_row(i);
            xt[0] = 1.0;
            xt[1..].copy_from_slice(x);
            fill_eta(x, &theta, g, d, &mut eta);
            let lse = log_sum_exp(&eta);
            let p: Vec<f64> = eta.iter().map(|e| (e - lse).exp()).collect();
            for k in 1..g {
                let r = tau[i * g + k] - p[k];
                for a in 0..m {
                    grad[(k - 1) * m + a] += r * xt[a];
                }
                for l in 1..g {
                    let w = p[k] * (if k == l { 1.0 } else { 0.0 } - p[l]);
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..m {
                        let row = ((k - 1) * m + a) * dim + (l - 1) * m;
                        let wa = w * xt[a];
                        for b in 0..m {
                            hess[row + b] += wa * xt[b];
                        }
                    }
                }
            }
        }
        for j in 0..dim {
            hess[j * dim + j] += HESSIAN_RIDGE;
        }
        let step = match Cholesky::factor(&hess, dim) {
            Ok(c) => c.solve(&grad),
            Err(_) => break,
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let value = objective(data, tau, g, &trial, &mut eta);
            if value.is_finite() && value >= current {
                let gain = value - current;
                theta = trial;
                current = value;
                accepted = true;
                if gain <= 1e-12 * (1.0 + current.abs()) {
                    return to_gates(&theta, g, d);
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    to_gates(&theta, g, d)
}

fn to_gates(theta: &[f64], g: usize, d: usize) -> Vec<Gate> {
    let mut out = vec![Gate::zero(d)];
    for k in 1..g {
        let c = &theta[(k - 1) * (d + 1)..k * (d + 1)];
        out.push(Gate { w0: c[0], w: c[1..].to_vec() });
    }
    out
}
