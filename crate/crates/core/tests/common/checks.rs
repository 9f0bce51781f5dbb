//! Numerical oracle checks shared by the integration tests and the acceptance
//! report. Each returns the worst error seen.

#![allow(dead_code)]

use cwm::datagen::{generate, GroupSpec, ScenarioSpec, XLawSpec};
use cwm::densities::{gaussian_logpdf, student_logpdf, GaussianParams, LinearMap, StudentParams};
use cwm::em::{fit, max_relative_decrease, DofMode, FitConfig, InitStrategy};
use cwm::model::{fmg_to_cwm, strip_to_fmr, t_conditional_decompose, to_fmrc};
use cwm::special::{chi_sq_cdf, chi_sq_quantile};
use cwm::surfaces::decision_value;
use cwm::{Component, Conditional, CwmModel, Marginal, Variant};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

pub fn normal(r: &mut TestRng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn vector(r: &mut TestRng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * normal(r)).collect()
}

/// `A A' + 0.5 I` with Gaussian `A`.
pub fn spd(r: &mut TestRng, n: usize) -> Vec<f64> {
    let a = vector(r, n * n, 1.0);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>();
        }
        s[i * n + i] += 0.5;
    }
    s
}

pub fn random_gaussian_component(r: &mut TestRng, d: usize, weight: f64) -> Component {
    Component {
        weight,
        x_marginal: Some(Marginal::Gaussian(GaussianParams::new(vector(r, d, 3.0), spd(r, d)).unwrap())),
        y_conditional: Conditional::gaussian(LinearMap::new(vector(r, d, 2.0), 3.0 * normal(r)), 0.2 + r.random::<f64>()),
    }
}

pub fn random_student_component(r: &mut TestRng, d: usize, weight: f64) -> Component {
    Component {
        weight,
        x_marginal: Some(Marginal::Student(
            StudentParams::new(vector(r, d, 3.0), spd(r, d), 1.5 + 20.0 * r.random::<f64>()).unwrap(),
        )),
        y_conditional: Conditional::student(
            LinearMap::new(vector(r, d, 2.0), 3.0 * normal(r)),
            0.2 + r.random::<f64>(),
            1.5 + 20.0 * r.random::<f64>(),
        ),
    }
}

pub fn random_weights(r: &mut TestRng, g: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..g).map(|_| 0.2 + r.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn random_cwm(r: &mut TestRng, variant: Variant, d: usize, g: usize) -> CwmModel {
    let w = random_weights(r, g);
    let comps = w
        .iter()
        .map(|&wg| match variant {
            Variant::TCwm => random_student_component(r, d, wg),
            _ => random_gaussian_component(r, d, wg),
        })
        .collect();
    CwmModel::new(variant, comps, None).unwrap()
}

/// Points near the model's covariate locations.
pub fn random_points(r: &mut TestRng, model: &CwmModel, n: usize) -> Vec<(Vec<f64>, f64)> {
    let d = model.d();
    (0..n)
        .map(|_| {
            let c = &model.components()[r.random_range(0..model.n_components())];
            let x: Vec<f64> = match &c.x_marginal {
                Some(m) => m.center().iter().map(|v| v + 2.0 * normal(r)).collect(),
                None => vector(r, d, 3.0),
            };
            let y = c.y_conditional.map.eval(&x) + 2.0 * normal(r);
            (x, y)
        })
        .collect()
}

/// Joint Gaussian log density against its CWM factorization.
pub fn prop1_gap(models: usize, points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..models {
        let q = 2 + k % 3;
        let joint = GaussianParams::new(vector(&mut r, q, 3.0), spd(&mut r, q)).unwrap();
        let model = CwmModel::new(Variant::GaussianCwm, vec![fmg_to_cwm(&joint, 1.0).unwrap()], None).unwrap();
        for _ in 0..points {
            let z: Vec<f64> = joint.mean().iter().map(|m| m + 2.0 * normal(&mut r)).collect();
            let lhs = gaussian_logpdf(&z, &joint).unwrap();
            let rhs = model.joint_logpdf(&z[..q - 1], z[q - 1]).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// CWM with a shared covariate law against the mixture of regressions.
pub fn prop2_gap(models: usize, points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..models {
        let d = 1 + k % 3;
        let g = 2 + k % 3;
        let marginal = Marginal::Gaussian(GaussianParams::new(vector(&mut r, d, 3.0), spd(&mut r, d)).unwrap());
        let w = random_weights(&mut r, g);
        let comps = w
            .iter()
            .map(|&wg| Component { x_marginal: Some(marginal.clone()), ..random_gaussian_component(&mut r, d, wg) })
            .collect();
        let cwm = CwmModel::new(Variant::GaussianCwm, comps, None).unwrap();
        let fmr = strip_to_fmr(&cwm).unwrap();
        for (x, y) in random_points(&mut r, &cwm, points) {
            worst = worst.max(max_diff(&cwm.posterior(&x, y).unwrap(), &fmr.posterior(&x, y).unwrap()));
        }
    }
    worst
}

/// Homoscedastic equal-weight CWM against the gated mixture of regressions.
pub fn prop3_gap(models: usize, points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..models {
        let d = 1 + k % 3;
        let g = 2 + k % 3;
        let cov = spd(&mut r, d);
        let comps = (0..g)
            .map(|_| Component {
                x_marginal: Some(Marginal::Gaussian(GaussianParams::new(vector(&mut r, d, 2.0), cov.clone()).unwrap())),
                ..random_gaussian_component(&mut r, d, 1.0 / g as f64)
            })
            .collect();
        let cwm = CwmModel::new(Variant::GaussianCwm, comps, None).unwrap();
        let fmrc = to_fmrc(&cwm).unwrap();
        for (x, y) in random_points(&mut r, &cwm, points) {
            worst = worst.max(max_diff(&cwm.posterior(&x, y).unwrap(), &fmrc.posterior(&x, y).unwrap()));
        }
    }
    worst
}

/// Multivariate t log density against marginal plus conditional.
pub fn prop4_gap(models: usize, points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..models {
        let q = 2 + k % 3;
        let q1 = 1 + k % (q - 1);
        let joint = StudentParams::new(vector(&mut r, q, 3.0), spd(&mut r, q), 0.5 + 30.0 * r.random::<f64>()).unwrap();
        let dec = t_conditional_decompose(&joint, q1).unwrap();
        for _ in 0..points {
            let z: Vec<f64> = joint.location().iter().map(|m| m + 3.0 * normal(&mut r)).collect();
            let lhs = student_logpdf(&z, &joint).unwrap();
            let cond = dec.conditional(&z[..q1]).unwrap();
            let rhs = student_logpdf(&z[..q1], &dec.marginal).unwrap() + student_logpdf(&z[q1..], &cond).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

pub struct TLimitReport {
    /// Largest `|f_t − f_N|` in density space on `δ ≤ 25`.
    pub density_gap: f64,
    /// Largest log-space gap on `δ ≤ 16` (within 4σ).
    pub log_gap_4sd: f64,
    /// Largest log-space gap on `δ ≤ 25` (within 5σ).
    pub log_gap_5sd: f64,
    /// Largest deviation of the log gap from `q(q−2)/(4ν) − qδ/(2ν) + δ²/(4ν)`.
    pub expansion_error: f64,
}

/// Student law at `ν = 10⁶` against the Gaussian along rays `μ + s L u`, `|s| ≤ 5`.
pub fn t_limit() -> TLimitReport {
    let nu = 1e6;
    let mut r = rng(11);
    let mut rep = TLimitReport { density_gap: 0.0, log_gap_4sd: 0.0, log_gap_5sd: 0.0, expansion_error: 0.0 };
    for q in 1..=3usize {
        let mu = vector(&mut r, q, 2.0);
        let cov = spd(&mut r, q);
        let g = GaussianParams::new(mu.clone(), cov.clone()).unwrap();
        let t = StudentParams::new(mu.clone(), cov.clone(), nu).unwrap();
        let lower = g.cholesky().lower().to_vec();
        for _ in 0..5 {
            let mut u = vector(&mut r, q, 1.0);
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            for k in 0..=200 {
                let s = -5.0 + 10.0 * k as f64 / 200.0;
                let z: Vec<f64> = (0..q).map(|i| mu[i] + s * (0..=i).map(|j| lower[i * q + j] * u[j]).sum::<f64>()).collect();
                let (lt, lg) = (student_logpdf(&z, &t).unwrap(), gaussian_logpdf(&z, &g).unwrap());
                let gap = lt - lg;
                let delta = s * s;
                let qf = q as f64;
                let expansion = qf * (qf - 2.0) / (4.0 * nu) - qf * delta / (2.0 * nu) + delta * delta / (4.0 * nu);
                rep.expansion_error = rep.expansion_error.max((gap - expansion).abs());
                rep.density_gap = rep.density_gap.max((lt.exp() - lg.exp()).abs());
                rep.log_gap_5sd = rep.log_gap_5sd.max(gap.abs());
                if delta <= 16.0 + 1e-9 {
                    rep.log_gap_4sd = rep.log_gap_4sd.max(gap.abs());
                }
            }
        }
    }
    rep
}

/// Trapezoid integral of a two-group `d = 1` joint density over a wide box.
pub fn joint_integral_gap() -> f64 {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for variant in [Variant::GaussianCwm, Variant::TCwm] {
        let mut model = random_cwm(&mut r, variant, 1, 2);
        if variant == Variant::TCwm {
            // heavy enough tails to matter, light enough for the box to hold the mass
            let comps = model
                .components()
                .iter()
                .map(|c| {
                    let m = c.x_marginal.as_ref().unwrap();
                    Component {
                        weight: c.weight,
                        x_marginal: Some(Marginal::Student(
                            StudentParams::new(m.center().to_vec(), m.matrix().to_vec(), 6.0).unwrap(),
                        )),
                        y_conditional: Conditional::student(c.y_conditional.map.clone(), c.y_conditional.noise_var, 6.0),
                    }
                })
                .collect();
            model = CwmModel::new(variant, comps, None).unwrap();
        }
        let (x_lo, x_hi) = (-80.0, 80.0);
        let n = 1601;
        let h = (x_hi - x_lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = x_lo + i as f64 * h;
            let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            // y range follows the regression lines so the box covers both ridges
            let centers: Vec<f64> = model.components().iter().map(|c| c.y_conditional.map.eval(&[x])).collect();
            let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - 60.0;
            let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 60.0;
            let m = 2001;
            let hy = (hi - lo) / (m - 1) as f64;
            let mut inner = 0.0;
            for j in 0..m {
                let y = lo + j as f64 * hy;
                let wy = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
                inner += wy * model.joint_logpdf(&[x], y).unwrap().exp();
            }
            total += wx * inner * hy;
        }
        worst = worst.max((total * h - 1.0).abs());
    }
    worst
}

/// `decision_value` against the posterior logit at random points.
pub fn decision_logit_gap(points: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut sign_errors = 0;
    let models: Vec<CwmModel> = [Variant::GaussianCwm, Variant::TCwm, Variant::GaussianCwm, Variant::TCwm]
        .iter()
        .enumerate()
        .map(|(k, &v)| random_cwm(&mut r, v, 1 + k % 2, 2))
        .collect();
    for k in 0..points {
        let model = &models[k % models.len()];
        let (x, y) = random_points(&mut r, model, 1).pop().unwrap();
        let dv = decision_value(model, &x, y).unwrap();
        let p = model.posterior(&x, y).unwrap();
        if p[0] > 1e-300 && p[1] > 1e-300 {
            let logit = p[1].ln() - p[0].ln();
            worst = worst.max((dv - logit).abs() / (1.0 + dv.abs()));
        }
        if dv != 0.0 && (dv > 0.0) != (p[1] > p[0]) {
            sign_errors += 1;
        }
    }
    (worst, sign_errors)
}

/// Worst of `|CDF(Q(p)) − p|` and `|Q(CDF(x)) − x|`.
pub fn chi_sq_roundtrip_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for dof in [1u32, 2, 3, 5, 10, 30] {
        for p in [0.001, 0.05, 0.5, 0.9, 0.95, 0.99, 0.999] {
            worst = worst.max((chi_sq_cdf(chi_sq_quantile(p, dof).unwrap(), dof) - p).abs());
        }
    }
    for dof in [1u32, 2, 5] {
        for x in [0.1, 1.0, 5.0, 20.0] {
            let back = chi_sq_quantile(chi_sq_cdf(x, dof), dof).unwrap();
            worst = worst.max((back - x).abs());
        }
    }
    worst
}

/// Two well-separated groups with random parameters.
pub fn random_scenario(r: &mut TestRng, d: usize, n_per: usize, seed: u64) -> ScenarioSpec {
    let groups = (0..2)
        .map(|k| {
            let mean: Vec<f64> = (0..d).map(|_| 8.0 * k as f64 + normal(r)).collect();
            GroupSpec {
                n: n_per,
                x_law: XLawSpec::isotropic(mean, 1.0 + 0.5 * r.random::<f64>()),
                slope: vector(r, d, 2.0),
                intercept: 3.0 * normal(r),
                noise_sd: 0.5 + r.random::<f64>(),
                noise_dof: None,
            }
        })
        .collect();
    ScenarioSpec { name: None, groups, noise: None, seed }
}

pub struct MonotoneReport {
    pub fits: usize,
    /// Fits that returned a result (the rest were degenerate on every start).
    pub completed: usize,
    pub worst_decrease: f64,
    pub worst_row_sum: f64,
}

/// Runs `fits` single-start fits over all variants and random data.
pub fn em_monotone(fits: usize, seed: u64) -> MonotoneReport {
    let mut r = rng(seed);
    let mut worst_decrease: f64 = 0.0;
    let mut worst_row_sum: f64 = 0.0;
    let mut completed = 0;
    for k in 0..fits {
        let variant = Variant::ALL[k % Variant::ALL.len()];
        let d = 1 + (k / Variant::ALL.len()) % 2;
        let spec = random_scenario(&mut r, d, 40, seed.wrapping_add(k as u64));
        let data = generate(&spec).unwrap();
        let cfg = FitConfig {
            n_starts: 1,
            max_iter: 150,
            seed: k as u64,
            init: if k % 2 == 0 { InitStrategy::Kmeans } else { InitStrategy::RandomPartition },
            dof_mode: if k % 3 == 0 { DofMode::Fixed(6.0) } else { DofMode::Estimate },
            ..FitConfig::new(2, variant)
        };
        let Ok(res) = fit(&data, &cfg) else { continue };
        completed += 1;
        worst_decrease = worst_decrease.max(max_relative_decrease(&res.loglik_trace));
        for row in &res.responsibilities {
            worst_row_sum = worst_row_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    MonotoneReport { fits, completed, worst_decrease, worst_row_sum }
}
