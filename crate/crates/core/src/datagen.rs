//! Seeded synthetic data: the published simulation designs and samplers for
//! arbitrary models.
//!
//! Generation is reproducible across platforms. The generator is
//! xoshiro256++ seeded through SplitMix64 (`seed_from_u64`), uniforms are
//! `(next_u64 >> 11) · 2⁻⁵³`, normals use the cosine branch of Box–Muller
//! (two uniforms per normal), gamma variates use Marsaglia–Tsang, and rows are
//! shuffled with a Fisher–Yates pass drawn from the same stream after all
//! points are generated. Group points come first in spec order, then noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::densities::{GaussianParams, StudentParams};
use crate::error::{CwmError, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{CwmModel, Dataset, Label, Marginal, Variant};

/// Covariate law of one simulated group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum XLawSpec {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Student { location: Vec<f64>, scale: Vec<Vec<f64>>, dof: f64 },
}

impl XLawSpec {
    /// Independent coordinates with common standard deviation `sd`.
    pub fn isotropic(mean: Vec<f64>, sd: f64) -> Self {
        let d = mean.len();
        let cov = (0..d).map(|i| (0..d).map(|j| if i == j { sd * sd } else { 0.0 }).collect()).collect();
        XLawSpec::Gaussian { mean, cov }
    }

    fn dim(&self) -> usize {
        match self {
            XLawSpec::Gaussian { mean, .. } => mean.len(),
            XLawSpec::Student { location, .. } => location.len(),
        }
    }

    fn compile(&self) -> Result<Marginal> {
        Ok(match self {
            XLawSpec::Gaussian { mean, cov } => Marginal::Gaussian(GaussianParams::from_rows(mean.clone(), cov)?),
            XLawSpec::Student { location, scale, dof } => {
                Marginal::Student(StudentParams::from_rows(location.clone(), scale, *dof)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub n: usize,
    pub x_law: XLawSpec,
    pub slope: Vec<f64>,
    pub intercept: f64,
    /// Standard deviation (not variance) of the regression error.
    pub noise_sd: f64,
    /// Student-t error with this dof instead of a Gaussian one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dof: Option<f64>,
}

/// Uniform background points over a box in `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub count: usize,
    /// One `[low, high]` interval per coordinate of `(x, y)`.
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub groups: Vec<GroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn d(&self) -> usize {
        self.groups.first().map(|g| g.slope.len()).unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.n).sum::<usize>() + self.noise.as_ref().map_or(0, |n| n.count)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.groups.is_empty() || d == 0 {
            return Err(CwmError::InvalidParameter("a scenario needs at least one group and one predictor".into()));
        }
        for (k, g) in self.groups.iter().enumerate() {
            let bad = |m: &str| Err(CwmError::InvalidParameter(format!("group {}: {m}", k + 1)));
            if g.n == 0 {
                return bad("n must be at least 1");
            }
            if g.slope.len() != d || g.x_law.dim() != d {
                return bad("dimension differs from the first group");
            }
            if !(g.noise_sd > 0.0) || !g.noise_sd.is_finite() {
                return bad("noise_sd must be positive");
            }
            if let Some(v) = g.noise_dof {
                if !(v > 0.0) {
                    return bad("noise_dof must be positive");
                }
            }
            g.x_law.compile()?;
        }
        if let Some(noise) = &self.noise {
            if noise.bounds.len() != d + 1 {
                return Err(CwmError::InvalidParameter(format!("noise box needs {} intervals", d + 1)));
            }
            if noise.bounds.iter().any(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(CwmError::InvalidParameter("noise box intervals must be nonempty".into()));
            }
        }
        Ok(())
    }
}

pub const BUILTIN_NAMES: [&str; 9] = ["ex1", "ex2", "ex3", "ex4_s2", "ex4_s4", "ex5_s2", "ex5_s4", "ex6_s2", "ex6_s4"];

fn line_group(n: usize, mu: f64, sd: f64, b0: f64, b1: f64, noise_sd: f64) -> GroupSpec {
    GroupSpec { n, x_law: XLawSpec::isotropic(vec![mu], sd), slope: vec![b1], intercept: b0, noise_sd, noise_dof: None }
}

/// The published simulation designs, with seed 0.
pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec> {
    let box_1d = |count| Some(NoiseSpec { count, bounds: vec![[-5.0, 30.0], [-50.0, 130.0]] });
    let (groups, noise) = match name {
        "ex1" => (vec![line_group(100, 10.0, 2.0, 2.0, 6.0, 2.0), line_group(200, -10.0, 2.0, 4.0, -6.0, 2.0)], None),
        "ex2" => (
            vec![
                line_group(100, 5.0, 1.0, 40.0, 6.0, 2.0),
                line_group(200, 10.0, 2.0, 40.0, -1.5, 1.0),
                line_group(150, 20.0, 3.0, 150.0, 7.0, 2.0),
            ],
            None,
        ),
        "ex3" => (
            vec![
                line_group(100, 5.0, 2.0, 2.0, 6.0, 2.0),
                line_group(200, 20.0, 1.0, 2.0, 6.0, 1.0),
                line_group(150, 40.0, 2.0, 2.0, 6.0, 2.0),
            ],
            None,
        ),
        "ex4_s2" | "ex4_s4" => {
            let s = if name.ends_with("s2") { 2.0 } else { 4.0 };
            (
                vec![
                    line_group(100, 5.0, s, 40.0, 6.0, s),
                    line_group(100, 10.0, s, 40.0, -1.5, s),
                    line_group(100, 20.0, s, 150.0, -7.0, s),
                ],
                box_1d(50),
            )
        }
        "ex5_s2" | "ex5_s4" => {
            let s = if name.ends_with("s2") { 2.0 } else { 4.0 };
            (
                vec![
                    line_group(50, 5.0, s, 2.0, 6.0, s),
                    line_group(50, 10.0, s, 2.0, -1.5, s),
                    line_group(50, 40.0, s, 2.0, -7.0, s),
                ],
                box_1d(25),
            )
        }
        "ex6_s2" | "ex6_s4" => {
            let s = if name.ends_with("s2") { 2.0 } else { 4.0 };
            let v = s * s;
            let group = |mean: Vec<f64>, off: f64, slope: Vec<f64>| GroupSpec {
                n: 150,
                x_law: XLawSpec::Gaussian { mean, cov: vec![vec![v, off], vec![off, v]] },
                slope,
                intercept: 0.0,
                noise_sd: s,
                noise_dof: None,
            };
            (
                vec![group(vec![5.0, 20.0], -0.1, vec![6.0, 1.2]), group(vec![2.0, 4.0], 0.1, vec![-1.5, 3.0])],
                Some(NoiseSpec { count: 50, bounds: vec![[-5.0, 40.0], [-5.0, 40.0], [-20.0, 170.0]] }),
            )
        }
        _ => {
            return Err(CwmError::InvalidParameter(format!(
                "unknown scenario '{name}' (expected one of {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(ScenarioSpec { name: Some(name.to_string()), groups, noise, seed: 0 })
}

/// Uniform on `(0, 1]`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Standard normal by the cosine branch of Box–Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = open_uniform(rng);
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Gamma variate with unit scale (Marsaglia–Tsang).
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let boost = open_uniform(rng).powf(1.0 / shape);
        return gamma(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = standard_normal(rng);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// `√(ν / χ²_ν)`, the scale mixing factor of a Student-t draw.
fn t_factor<R: Rng + ?Sized>(rng: &mut R, dof: f64) -> f64 {
    (dof / (2.0 * gamma(rng, 0.5 * dof))).sqrt()
}

fn correlated<R: Rng + ?Sized>(rng: &mut R, center: &[f64], chol: &Cholesky, factor: f64) -> Vec<f64> {
    let q = center.len();
    let z: Vec<f64> = (0..q).map(|_| standard_normal(rng)).collect();
    let l = chol.lower();
    (0..q).map(|i| center[i] + factor * (0..=i).map(|k| l[i * q + k] * z[k]).sum::<f64>()).collect()
}

fn draw_marginal<R: Rng + ?Sized>(rng: &mut R, m: &Marginal, factor: Option<f64>) -> Vec<f64> {
    let f = match (m, factor) {
        (_, Some(f)) => f,
        (Marginal::Gaussian(_), None) => 1.0,
        (Marginal::Student(t), None) => t_factor(rng, t.dof()),
    };
    correlated(rng, m.center(), m.cholesky(), f)
}

fn shuffle<R: Rng + ?Sized, T>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn assemble<R: Rng + ?Sized>(rng: &mut R, mut rows: Vec<(Vec<f64>, f64, Label)>, d: usize) -> Result<Dataset> {
    shuffle(rng, &mut rows);
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (xi, yi, l) in rows {
        x.extend(xi);
        y.push(yi);
        labels.push(l);
    }
    Dataset::new(x, d, y, Some(labels))
}

/// Draws a labeled dataset from a scenario; noise rows carry [`Label::Noise`].
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.d();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.total());
    for (k, g) in spec.groups.iter().enumerate() {
        let law = g.x_law.compile()?;
        for _ in 0..g.n {
            let x = draw_marginal(&mut rng, &law, None);
            let eps = match g.noise_dof {
                None => standard_normal(&mut rng),
                Some(v) => standard_normal(&mut rng) * t_factor(&mut rng, v),
            };
            let y = g.intercept + linalg::dot(&g.slope, &x) + g.noise_sd * eps;
            rows.push((x, y, Label::Group(k)));
        }
    }
    if let Some(noise) = &spec.noise {
        for _ in 0..noise.count {
            let z: Vec<f64> = noise.bounds.iter().map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>()).collect();
            rows.push((z[..d].to_vec(), z[d], Label::Noise));
        }
    }
    assemble(&mut rng, rows, d)
}

/// Draws `n` labeled rows from a model that has covariate laws.
pub fn sample_model(model: &CwmModel, n: usize, seed: u64) -> Result<Dataset> {
    if !model.variant().has_marginal() {
        return Err(CwmError::WrongVariant { expected: "a variant with covariate laws", found: model.variant() });
    }
    let d = model.d();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let weights = model.weights();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random::<f64>();
        let mut k = weights.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                k = j;
                break;
            }
            u -= w;
        }
        let c = &model.components()[k];
        let m = c.x_marginal.as_ref().expect("validated");
        let cond = &c.y_conditional;
        let (x, y_factor) = match model.variant() {
            // joint t: one mixing variable for both parts
            Variant::Fmt => {
                let f = t_factor(&mut rng, m.dof().expect("validated"));
                (draw_marginal(&mut rng, m, Some(f)), f)
            }
            _ => {
                let x = draw_marginal(&mut rng, m, None);
                let f = cond.dof.map_or(1.0, |z| t_factor(&mut rng, z));
                (x, f)
            }
        };
        let y = cond.map.eval(&x) + y_factor * cond.noise_var.sqrt() * standard_normal(&mut rng);
        rows.push((x, y, Label::Group(k)));
    }
    assemble(&mut rng, rows, d)
}

/// Copy with `constant` added to the second covariate of the 25th row.
pub fn crab_perturb(data: &Dataset, constant: f64) -> Result<Dataset> {
    if data.n() < 25 || data.d() < 2 {
        return Err(CwmError::InvalidInput("perturbation needs at least 25 rows and 2 covariates".into()));
    }
    let mut x = data.x().to_vec();
    x[24 * data.d() + 1] += constant;
    Dataset::new(x, data.d(), data.y().to_vec(), data.labels().map(|l| l.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_published_sizes() {
        assert_eq!(builtin_scenario("ex1").unwrap().total(), 300);
        assert_eq!(builtin_scenario("ex2").unwrap().total(), 450);
        assert_eq!(builtin_scenario("ex3").unwrap().total(), 450);
        assert_eq!(builtin_scenario("ex4_s2").unwrap().total(), 350);
        assert_eq!(builtin_scenario("ex5_s4").unwrap().total(), 175);
        let ex6 = builtin_scenario("ex6_s4").unwrap();
        assert_eq!((ex6.total(), ex6.d()), (350, 2));
        assert_eq!(ex6.groups[0].slope, vec![6.0, 1.2]);
        assert_eq!(ex6.groups[1].slope, vec![-1.5, 3.0]);
        assert!(builtin_scenario("ex7").is_err());
        for name in BUILTIN_NAMES {
            builtin_scenario(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn ex3_groups_share_the_line() {
        let s = builtin_scenario("ex3").unwrap();
        let sds: Vec<f64> = s.groups.iter().map(|g| g.noise_sd).collect();
        assert_eq!(sds, vec![2.0, 1.0, 2.0]);
        assert!(s.groups.iter().all(|g| g.slope == vec![6.0] && g.intercept == 2.0));
    }

    #[test]
    fn deterministic_and_sized() {
        let spec = builtin_scenario("ex4_s2").unwrap().with_seed(11);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let labels = a.labels().unwrap();
        for k in 0..3 {
            assert_eq!(labels.iter().filter(|l| **l == Label::Group(k)).count(), 100);
        }
        assert_eq!(labels.iter().filter(|l| **l == Label::Noise).count(), 50);
        for i in 0..a.n() {
            if labels[i] == Label::Noise {
                let x = a.x_row(i)[0];
                assert!((-5.0..=30.0).contains(&x) && (-50.0..=130.0).contains(&a.y()[i]));
            }
        }
        assert_ne!(generate(&spec.clone().with_seed(12)).unwrap(), a);
    }

    #[test]
    fn tiny_noise_lies_on_line() {
        let spec = ScenarioSpec {
            name: None,
            groups: vec![GroupSpec { noise_sd: 1e-12, ..line_group(50, 0.0, 3.0, 1.5, -2.0, 1.0) }],
            noise: None,
            seed: 3,
        };
        let data = generate(&spec).unwrap();
        for i in 0..data.n() {
            assert!((data.y()[i] - (1.5 - 2.0 * data.x_row(i)[0])).abs() < 1e-6 * 2.0);
        }
    }

    #[test]
    fn ex1_group_means() {
        let data = generate(&builtin_scenario("ex1").unwrap().with_seed(5)).unwrap();
        let labels = data.labels().unwrap();
        for (k, mu, n) in [(0, 10.0, 100.0), (1, -10.0, 200.0)] {
            let xs: Vec<f64> = (0..data.n()).filter(|&i| labels[i] == Label::Group(k)).map(|i| data.x_row(i)[0]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            assert!((mean - mu).abs() < 3.0 * 2.0 / f64::sqrt(n));
        }
    }

    #[test]
    fn gamma_moments() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for shape in [0.3, 2.5] {
            let n = 20_000;
            let draws: Vec<f64> = (0..n).map(|_| gamma(&mut rng, shape)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 4.0 * (shape / n as f64).sqrt());
        }
    }

    #[test]
    fn perturb_roundtrip() {
        let data = generate(&builtin_scenario("ex6_s2").unwrap()).unwrap();
        assert_eq!(crab_perturb(&data, 0.0).unwrap(), data);
        let moved = crab_perturb(&data, 10.0).unwrap();
        let diffs: Vec<usize> = (0..data.x().len()).filter(|&i| data.x()[i] != moved.x()[i]).collect();
        assert_eq!(diffs, vec![24 * 2 + 1]);
        assert!((moved.x()[49] - data.x()[49] - 10.0).abs() < 1e-12);
        let back = crab_perturb(&crab_perturb(&data, 20.0).unwrap(), -20.0).unwrap();
        for (a, b) in back.x().iter().zip(data.x()) {
            assert!((a - b).abs() < 1e-12);
        }
        let ex1 = generate(&builtin_scenario("ex1").unwrap()).unwrap();
        assert!(crab_perturb(&ex1, 1.0).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = builtin_scenario("ex6_s2").unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"box\""));
        assert_eq!(serde_json::from_str::<ScenarioSpec>(&s).unwrap(), spec);
    }
}
