use cwm::datagen::{builtin_scenario, generate, GroupSpec, ScenarioSpec, XLawSpec};
use cwm::densities::{GaussianParams, LinearMap};
use cwm::em::{fit, fit_from_model, fit_from_partition, DofMode, FitConfig, InitStrategy};
use cwm::metrics::evaluate;
use cwm::{Component, Conditional, CwmModel, Label, Marginal, Variant};

fn truth_model(spec: &ScenarioSpec) -> CwmModel {
    let total: usize = spec.groups.iter().map(|g| g.n).sum();
    let comps = spec
        .groups
        .iter()
        .map(|g| {
            let XLawSpec::Gaussian { mean, cov } = &g.x_law else { panic!("gaussian groups expected") };
            Component {
                weight: g.n as f64 / total as f64,
                x_marginal: Some(Marginal::Gaussian(GaussianParams::from_rows(mean.clone(), cov).unwrap())),
                y_conditional: Conditional::gaussian(LinearMap::new(g.slope.clone(), g.intercept), g.noise_sd * g.noise_sd),
            }
        })
        .collect();
    CwmModel::new(Variant::GaussianCwm, comps, None).unwrap()
}

#[test]
fn one_group_recovers_generating_parameters() {
    let spec = ScenarioSpec {
        name: None,
        groups: vec![GroupSpec {
            n: 10_000,
            x_law: XLawSpec::isotropic(vec![3.0], 2.0),
            slope: vec![1.5],
            intercept: -2.0,
            noise_sd: 0.5,
            noise_dof: None,
        }],
        noise: None,
        seed: 4,
    };
    let data = generate(&spec).unwrap();
    let res = fit(&data, &FitConfig::new(1, Variant::GaussianCwm)).unwrap();
    let c = &res.model.components()[0];
    let m = c.x_marginal.as_ref().unwrap();
    let n = 10_000f64;
    // standard errors: mean σ/√n, variance σ²√(2/n), slope σε/(σx√n), intercept ≈ σε√((1+μ²/σx²)/n)
    assert!((m.center()[0] - 3.0).abs() < 3.0 * 2.0 / n.sqrt());
    assert!((m.matrix()[0] - 4.0).abs() < 3.0 * 4.0 * (2.0 / n).sqrt());
    assert!((c.y_conditional.map.slope[0] - 1.5).abs() < 3.0 * 0.5 / (2.0 * n.sqrt()));
    assert!((c.y_conditional.map.intercept + 2.0).abs() < 3.0 * 0.5 * ((1.0 + 9.0 / 4.0) / n).sqrt());
    assert!((c.y_conditional.noise_var - 0.25).abs() < 3.0 * 0.25 * (2.0 / n).sqrt());
}

#[test]
fn first_example_cwm_separates_perfectly() {
    let data = generate(&builtin_scenario("ex1").unwrap().with_seed(0)).unwrap();
    let res = fit(&data, &FitConfig::new(2, Variant::GaussianCwm)).unwrap();
    let rep = evaluate(&data, &res).unwrap();
    assert_eq!(rep.misclassification_rate, Some(0.0));
}

#[test]
fn third_example_regression_mixture_confuses_groups() {
    let data = generate(&builtin_scenario("ex3").unwrap().with_seed(0)).unwrap();
    let res = fit(&data, &FitConfig::new(3, Variant::Fmr)).unwrap();
    let eta = evaluate(&data, &res).unwrap().misclassification_rate.unwrap();
    assert!(eta >= 0.4, "{eta}");
}

#[test]
fn dof_estimate_tracks_generating_value() {
    let spec = ScenarioSpec {
        name: None,
        groups: vec![GroupSpec {
            n: 10_000,
            x_law: XLawSpec::Student { location: vec![1.0], scale: vec![vec![2.0]], dof: 5.0 },
            slope: vec![2.0],
            intercept: 1.0,
            noise_sd: 1.0,
            noise_dof: Some(5.0),
        }],
        noise: None,
        seed: 8,
    };
    let data = generate(&spec).unwrap();
    let res = fit(&data, &FitConfig { n_starts: 1, ..FitConfig::new(1, Variant::TCwm) }).unwrap();
    let c = &res.model.components()[0];
    let nu = c.x_marginal.as_ref().unwrap().dof().unwrap();
    let zeta = c.y_conditional.dof.unwrap();
    assert!((3.5..=7.0).contains(&nu), "nu {nu}");
    assert!((3.5..=7.0).contains(&zeta), "zeta {zeta}");

    // profile likelihood over a common fixed dof peaks near both estimates
    let grid: Vec<f64> = (0..=32).map(|k| 2.0 + 0.25 * k as f64).collect();
    let profile: Vec<f64> = grid
        .iter()
        .map(|&v| fit(&data, &FitConfig { n_starts: 1, dof_mode: DofMode::Fixed(v), ..FitConfig::new(1, Variant::TCwm) }).unwrap().loglik())
        .collect();
    let best = grid[profile.iter().enumerate().fold(0, |b, (i, v)| if *v > profile[b] { i } else { b })];
    assert!((best - nu).abs() < 1.0 && (best - zeta).abs() < 1.0, "grid {best}, nu {nu}, zeta {zeta}");
    assert!(res.loglik() >= profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1e-6);
}

#[test]
fn relabelled_start_gives_relabelled_fit() {
    let data = generate(&builtin_scenario("ex2").unwrap().with_seed(5)).unwrap();
    let labels: Vec<usize> = data.labels().unwrap().iter().map(|l| l.group().unwrap()).collect();
    let perm = [2usize, 0, 1];
    let relabelled: Vec<usize> = labels.iter().map(|&g| perm[g]).collect();
    for variant in [Variant::GaussianCwm, Variant::TCwm, Variant::Fmr] {
        let cfg = FitConfig { init: InitStrategy::GivenLabels, ..FitConfig::new(3, variant) };
        let a = fit_from_partition(&data, &cfg, &labels).unwrap();
        let b = fit_from_partition(&data, &cfg, &relabelled).unwrap();
        // new component perm[g] of b is old component g of a
        let mut inverse = [0usize; 3];
        for (g, &p) in perm.iter().enumerate() {
            inverse[p] = g;
        }
        let a_moved = a.model.permuted(&inverse).unwrap();
        for (ca, cb) in a_moved.components().iter().zip(b.model.components()) {
            let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-8 * (1.0 + p.abs()));
            assert!(close(&ca.y_conditional.map.slope, &cb.y_conditional.map.slope), "{variant}");
            assert!(close(&[ca.y_conditional.noise_var, ca.weight], &[cb.y_conditional.noise_var, cb.weight]), "{variant}");
        }
        assert!((a.loglik() - b.loglik()).abs() < 1e-8 * a.loglik().abs());
    }
}

#[test]
fn truth_is_nearly_a_fixed_point() {
    let spec = builtin_scenario("ex2").unwrap().with_seed(6);
    let data = generate(&spec).unwrap();
    let truth = truth_model(&spec);
    let cfg = FitConfig { init: InitStrategy::GivenLabels, ..FitConfig::new(3, Variant::GaussianCwm) };
    let res = fit_from_model(&data, &cfg, &truth).unwrap();
    for ((fitted, t), g) in res.model.components().iter().zip(truth.components()).zip(&spec.groups) {
        let n = g.n as f64;
        let sx = t.x_marginal.as_ref().unwrap().matrix()[0].sqrt();
        let mu_gap = (fitted.x_marginal.as_ref().unwrap().center()[0] - t.x_marginal.as_ref().unwrap().center()[0]).abs();
        assert!(mu_gap < 4.0 * sx / n.sqrt(), "{mu_gap}");
        let b_gap = (fitted.y_conditional.map.slope[0] - t.y_conditional.map.slope[0]).abs();
        assert!(b_gap < 4.0 * g.noise_sd / (sx * n.sqrt()), "{b_gap}");
        assert!((fitted.weight - t.weight).abs() < 0.02);
    }
}

#[test]
fn fits_are_reproducible() {
    let data = generate(&builtin_scenario("ex4_s2").unwrap().with_seed(1)).unwrap();
    for variant in [Variant::GaussianCwm, Variant::Fmrc] {
        let cfg = FitConfig { seed: 42, ..FitConfig::new(3, variant) };
        let a = fit(&data, &cfg).unwrap();
        let b = fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn noise_rows_keep_their_label() {
    let data = generate(&builtin_scenario("ex4_s2").unwrap().with_seed(2)).unwrap();
    let n_noise = data.labels().unwrap().iter().filter(|l| **l == Label::Noise).count();
    assert_eq!(n_noise, 50);
}
