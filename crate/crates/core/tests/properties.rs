mod common;
use common::checks::*;

use cwm::datagen::{builtin_scenario, generate};
use cwm::densities::{GaussianParams, LinearMap};
use cwm::em::fit;
use cwm::em::FitConfig;
use cwm::metrics::{iwf, misclassification, wilks_lambda, NoiseRows};
use cwm::robust::{detect_outliers_with, robust_fit, robust_fit_with_detector, RobustConfig, RuleSpace};
use cwm::surfaces::decision_value;
use cwm::{Component, Conditional, CwmModel, Dataset, Label, Marginal, Variant};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = CwmModel> {
    (any::<u64>(), 1usize..=3, 2usize..=4, prop::sample::select(vec![Variant::GaussianCwm, Variant::TCwm]))
        .prop_map(|(seed, d, g, v)| random_cwm(&mut rng(seed), v, d, g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_rows_normalize(model in model_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        for (x, y) in random_points(&mut r, &model, 20) {
            let p = model.posterior(&x, y).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn classify_is_posterior_argmax(model in model_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let pts = random_points(&mut r, &model, 30);
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.0.clone()).collect();
        let data = Dataset::from_rows(&rows, pts.iter().map(|p| p.1).collect(), None).unwrap();
        let cls = model.classify(&data).unwrap();
        for (i, (x, y)) in pts.iter().enumerate() {
            let p = model.posterior(x, *y).unwrap();
            let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(p[cls[i]], best);
        }
    }

    #[test]
    fn relabeling_permutes_posteriors(model in model_strategy(), seed in any::<u64>()) {
        let g = model.n_components();
        let mut perm: Vec<usize> = (0..g).collect();
        perm.rotate_left(1 + (seed as usize) % g);
        let permuted = model.permuted(&perm).unwrap();
        let mut r = rng(seed);
        for (x, y) in random_points(&mut r, &model, 10) {
            let p = model.posterior(&x, y).unwrap();
            let q = permuted.posterior(&x, y).unwrap();
            for k in 0..g {
                prop_assert!((q[k] - p[perm[k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_components_negates_decision(seed in any::<u64>(), t in any::<bool>()) {
        let mut r = rng(seed);
        let model = random_cwm(&mut r, if t { Variant::TCwm } else { Variant::GaussianCwm }, 1 + (seed % 2) as usize, 2);
        let swapped = model.permuted(&[1, 0]).unwrap();
        for (x, y) in random_points(&mut r, &model, 10) {
            let a = decision_value(&model, &x, y).unwrap();
            let b = decision_value(&swapped, &x, y).unwrap();
            prop_assert!((a + b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn decision_depends_on_weight_ratio_only(seed in any::<u64>(), w in 0.05f64..0.95) {
        // shifting both log weights by the same amount is the identity after
        // normalisation; the decision moves by exactly the change of ln(π₁/π₀)
        let mut r = rng(seed);
        let model = random_cwm(&mut r, Variant::GaussianCwm, 1, 2);
        let reweighted = CwmModel::new(
            Variant::GaussianCwm,
            model.components().iter().zip([1.0 - w, w]).map(|(c, wg)| Component { weight: wg, ..c.clone() }).collect(),
            None,
        ).unwrap();
        let shift = (w / (1.0 - w)).ln() - (model.components()[1].weight / model.components()[0].weight).ln();
        for (x, y) in random_points(&mut r, &model, 10) {
            let a = decision_value(&model, &x, y).unwrap();
            let b = decision_value(&reweighted, &x, y).unwrap();
            prop_assert!((b - a - shift).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn wilks_affine_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = 1 + (seed % 3) as usize;
        let data = generate(&random_scenario(&mut r, d, 30, seed)).unwrap();
        let q = d + 1;
        // well-conditioned random map: identity plus a small perturbation
        let a: Vec<f64> = (0..q * q).map(|k| if k % (q + 1) == 0 { 1.0 } else { 0.0 } + 0.3 * normal(&mut r)).collect();
        let shift = vector(&mut r, q, 5.0);
        let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| {
            let z = data.z_row(i);
            (0..q).map(|j| shift[j] + (0..q).map(|k| a[j * q + k] * z[k]).sum::<f64>()).collect()
        }).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|z| z[..d].to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|z| z[d]).collect();
        let moved = Dataset::from_rows(&x, y, data.labels().map(|l| l.to_vec())).unwrap();
        let labels = data.labels().unwrap();
        let l0 = wilks_lambda(&data, labels, NoiseRows::Exclude).unwrap();
        let l1 = wilks_lambda(&moved, labels, NoiseRows::Exclude).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-8 * l0.abs().max(1e-300), "{} vs {}", l0, l1);
    }

    #[test]
    fn eta_invariant_to_label_permutations(seed in any::<u64>(), n in 10usize..80) {
        let mut r = rng(seed);
        let g = 3;
        let draw = |r: &mut TestRng| -> Vec<Label> {
            (0..n).map(|_| {
                let k = (normal(r).abs() * 10.0) as usize % (g + 1);
                if k == g { Label::Noise } else { Label::Group(k) }
            }).collect()
        };
        let truth = draw(&mut r);
        let pred = draw(&mut r);
        let base = misclassification(&truth, &pred, g).unwrap();
        let relabel = |v: &[Label], p: [usize; 3]| v.iter().map(|l| match l {
            Label::Group(k) => Label::Group(p[*k]),
            Label::Noise => Label::Noise,
        }).collect::<Vec<_>>();
        for p in [[1, 2, 0], [2, 1, 0], [0, 2, 1]] {
            prop_assert_eq!(misclassification(&truth, &relabel(&pred, p), g).unwrap().eta, base.eta);
            prop_assert_eq!(misclassification(&relabel(&truth, p), &pred, g).unwrap().eta, base.eta);
        }
        let total: usize = base.confusion.iter().flatten().sum();
        prop_assert_eq!(total, n);
    }
}

#[test]
fn em_monotone_on_random_fits() {
    let rep = em_monotone(200, 17);
    assert!(rep.completed >= 190, "{} of {} fits completed", rep.completed, rep.fits);
    assert!(rep.worst_decrease <= 1e-8, "{}", rep.worst_decrease);
    assert!(rep.worst_row_sum <= 1e-10, "{}", rep.worst_row_sum);
}

#[test]
fn iwf_invariant_to_component_order() {
    let data = generate(&builtin_scenario("ex2").unwrap().with_seed(3)).unwrap();
    let res = fit(&data, &FitConfig::new(3, Variant::GaussianCwm)).unwrap();
    let a = iwf(&data, &res.model, NoiseRows::Exclude, None).unwrap();
    let b = iwf(&data, &res.model.permuted(&[2, 0, 1]).unwrap(), NoiseRows::Exclude, None).unwrap();
    assert!((a - b).abs() < 1e-12 * a);
}

fn noisy() -> (Dataset, FitConfig) {
    let data = generate(&builtin_scenario("ex5_s2").unwrap().with_seed(1)).unwrap();
    (data, FitConfig::new(3, Variant::TCwm))
}

#[test]
fn outlier_set_grows_with_alpha() {
    let (data, cfg) = noisy();
    let res = fit(&data, &cfg).unwrap();
    let mut prev: Vec<usize> = Vec::new();
    for alpha in [1e-6, 1e-3, 0.01, 0.05, 0.1, 0.3, 0.6] {
        for space in [RuleSpace::Joint, RuleSpace::XOnly] {
            let _ = detect_outliers_with(&data, &res.model, &res.classification, alpha, space).unwrap();
        }
        let cur = detect_outliers_with(&data, &res.model, &res.classification, alpha, RuleSpace::Joint).unwrap();
        assert!(prev.iter().all(|i| cur.contains(i)), "alpha {alpha}");
        prev = cur;
    }
}

#[test]
fn robust_labels_account_for_every_row() {
    let (data, cfg) = noisy();
    let res = robust_fit(&data, &RobustConfig::new(Variant::GaussianCwm, cfg)).unwrap();
    let mut noise: Vec<usize> = (0..data.n()).filter(|&i| res.final_labels[i] == Label::Noise).collect();
    let mut flagged: Vec<usize> = res.outlier_indices.iter().chain(&res.recheck_indices).copied().collect();
    noise.sort();
    flagged.sort();
    assert_eq!(noise, flagged);
    let conf = res.confusion.unwrap();
    let total: usize = conf.iter().flatten().sum();
    assert_eq!(total, data.n());
    let labels = data.labels().unwrap();
    let true_noise = labels.iter().filter(|l| **l == Label::Noise).count();
    assert_eq!(conf.last().unwrap().iter().sum::<usize>(), true_noise);
    let col_noise: usize = conf.iter().map(|row| *row.last().unwrap()).sum();
    assert_eq!(col_noise, noise.len());
}

#[test]
fn vanishing_alpha_is_plain_fit() {
    let (data, cfg) = noisy();
    let detector = fit(&data, &cfg).unwrap();
    let rc = RobustConfig { alpha: 1e-300, ..RobustConfig::new(Variant::GaussianCwm, cfg.clone()) };
    let res = robust_fit_with_detector(&data, &rc, &detector).unwrap();
    assert!(res.outlier_indices.is_empty() && res.recheck_indices.is_empty());
    let plain = fit(&data, &FitConfig { variant: Variant::GaussianCwm, ..cfg }).unwrap();
    let cls = plain.model.classify(&data).unwrap();
    let want: Vec<Label> = cls.into_iter().map(Label::Group).collect();
    assert_eq!(res.final_labels, want);
}

#[test]
fn clean_data_flags_few_rows() {
    let data = generate(&builtin_scenario("ex2").unwrap().with_seed(2)).unwrap();
    let res = robust_fit(&data, &RobustConfig::new(Variant::TCwm, FitConfig::new(3, Variant::TCwm))).unwrap();
    let cap = (0.05 * data.n() as f64).ceil() as usize + 5;
    assert!(res.outlier_indices.len() <= cap, "{} > {cap}", res.outlier_indices.len());
}

#[test]
fn trimming_below_minimum_aborts() {
    let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..12).map(|i| (i * i % 7) as f64).collect();
    let data = Dataset::from_rows(&rows, y, None).unwrap();
    let comp = |mu: f64| Component {
        weight: 0.5,
        x_marginal: Some(Marginal::Gaussian(GaussianParams::univariate(mu, 1e-4).unwrap())),
        y_conditional: Conditional::gaussian(LinearMap::new(vec![0.0], 0.0), 1e-4),
    };
    let model = CwmModel::new(Variant::GaussianCwm, vec![comp(100.0), comp(200.0)], None).unwrap();
    let detector = cwm::em::FitResult::from_model(model, &data).unwrap();
    let err = robust_fit_with_detector(&data, &RobustConfig::new(Variant::GaussianCwm, FitConfig::new(2, Variant::GaussianCwm)), &detector);
    assert!(matches!(err, Err(cwm::CwmError::Degenerate(_))));
}
