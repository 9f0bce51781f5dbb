//! Table reproductions with fixed seeds, reported next to the reference values.

use std::fmt::Write;
use std::time::Instant;

use cwm::datagen::{builtin_scenario, crab_perturb, generate};
use cwm::em::{fit, FitConfig, FitResult, InitStrategy};
use cwm::metrics::{evaluate, joint_bic, misclassification};
use cwm::robust::{robust_fit_with_detector, RobustConfig};
use cwm::{Dataset, Label, Variant};
use serde::Serialize;

use crate::error::CliResult;

/// Published Example 1 figures: `(η %, Λ, ℰ)`.
pub const REFERENCE_EX1_CWM: (f64, f64, f64) = (0.0, 0.0396, 2.003);
pub const REFERENCE_EX1_FMR: (f64, f64, f64) = (5.33, 0.2306, 7.013);
/// Published Example 3 η (%) for CWM, FMR, FMRC.
pub const REFERENCE_EX3_ETA: [f64; 3] = [0.0, 51.33, 45.78];
/// Robust-pipeline cells: scenario, groups, published η (%) for tG and tt.
pub const REFERENCE_ROBUST: [(&str, usize, [f64; 2]); 6] = [
    ("ex4_s2", 3, [6.00, 5.71]),
    ("ex4_s4", 3, [4.29, 5.71]),
    ("ex5_s2", 3, [4.00, 5.14]),
    ("ex5_s4", 3, [40.00, 8.00]),
    ("ex6_s2", 2, [2.00, 2.29]),
    ("ex6_s4", 2, [6.57, 7.43]),
];
pub const CRAB_CONSTANTS: [f64; 8] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
/// Published crab error rates (%) per constant.
pub const REFERENCE_CRAB_FMT: [f64; 8] = [19.0, 19.0, 20.0, 18.0, 20.0, 20.0, 20.0, 20.0];
pub const REFERENCE_CRAB_T_CWM: [f64; 8] = [13.0, 13.0, 13.0, 12.0, 12.0, 11.0, 12.0, 12.0];
/// Random-partition starts per crab fit.
pub const CRAB_STARTS: usize = 100;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Percent.
    pub eta: f64,
    pub wilks_lambda: Option<f64>,
    pub iwf: f64,
    pub loglik: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantRuns {
    pub variant: Variant,
    pub init: InitStrategy,
    pub runs: Vec<SeedMetrics>,
}

impl VariantRuns {
    pub fn etas(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.eta).collect()
    }

    pub fn median_eta(&self) -> f64 {
        median(&self.etas())
    }

    pub fn median_lambda(&self) -> f64 {
        median(&self.runs.iter().filter_map(|r| r.wilks_lambda).collect::<Vec<_>>())
    }

    pub fn median_iwf(&self) -> f64 {
        median(&self.runs.iter().map(|r| r.iwf).collect::<Vec<_>>())
    }

    pub fn max_seconds(&self) -> f64 {
        self.runs.iter().map(|r| r.seconds).fold(0.0, f64::max)
    }
}

fn scenario_data(name: &str, seed: u64) -> CliResult<Dataset> {
    Ok(generate(&builtin_scenario(name)?.with_seed(seed))?)
}

fn run_variant(scenario: &str, groups: usize, variant: Variant, init: InitStrategy, seeds: &[u64]) -> CliResult<VariantRuns> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let data = scenario_data(scenario, seed)?;
        let started = Instant::now();
        let config = FitConfig { seed, init, ..FitConfig::new(groups, variant) };
        let result = fit(&data, &config)?;
        let report = evaluate(&data, &result)?;
        runs.push(SeedMetrics {
            seed,
            eta: 100.0 * report.misclassification_rate.unwrap_or(f64::NAN),
            wilks_lambda: report.wilks_lambda,
            iwf: report.iwf,
            loglik: result.loglik(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(VariantRuns { variant, init, runs })
}

#[derive(Debug, Clone, Serialize)]
pub struct Example1Report {
    pub cwm: VariantRuns,
    pub fmr: VariantRuns,
}

/// Two groups on `ex1`: gaussian_cwm and fmr, k-means starts.
pub fn example1(seeds: &[u64]) -> CliResult<Example1Report> {
    Ok(Example1Report {
        cwm: run_variant("ex1", 2, Variant::GaussianCwm, InitStrategy::Kmeans, seeds)?,
        fmr: run_variant("ex1", 2, Variant::Fmr, InitStrategy::Kmeans, seeds)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Example3Report {
    pub cwm: VariantRuns,
    pub fmr: VariantRuns,
    pub fmrc: VariantRuns,
    /// FMRC again from random partitions.
    pub fmrc_random: VariantRuns,
}

impl Example3Report {
    /// Seeds where CWM is below both FMR and FMRC (k-means starts).
    pub fn gap_holds(&self) -> Vec<bool> {
        (0..self.cwm.runs.len())
            .map(|k| self.cwm.runs[k].eta < self.fmr.runs[k].eta && self.cwm.runs[k].eta < self.fmrc.runs[k].eta)
            .collect()
    }
}

/// Three groups on `ex3`: gaussian_cwm, fmr and fmrc.
pub fn example3(seeds: &[u64]) -> CliResult<Example3Report> {
    Ok(Example3Report {
        cwm: run_variant("ex3", 3, Variant::GaussianCwm, InitStrategy::Kmeans, seeds)?,
        fmr: run_variant("ex3", 3, Variant::Fmr, InitStrategy::Kmeans, seeds)?,
        fmrc: run_variant("ex3", 3, Variant::Fmrc, InitStrategy::Kmeans, seeds)?,
        fmrc_random: run_variant("ex3", 3, Variant::Fmrc, InitStrategy::RandomPartition, seeds)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustCell {
    pub scenario: String,
    pub groups: usize,
    /// η (%) per seed with a Gaussian refit.
    pub t_gaussian: Vec<f64>,
    /// η (%) per seed with a Student-t refit.
    pub t_t: Vec<f64>,
    pub reference: [f64; 2],
    pub seconds: f64,
}

impl RobustCell {
    pub fn medians(&self) -> [f64; 2] {
        [median(&self.t_gaussian), median(&self.t_t)]
    }
}

/// One scenario of the robust study: a shared t_cwm detector per seed, then tG and tt refits.
pub fn robust_cell(scenario: &str, groups: usize, reference: [f64; 2], seeds: &[u64]) -> CliResult<RobustCell> {
    let started = Instant::now();
    let (mut tg, mut tt) = (Vec::new(), Vec::new());
    for &seed in seeds {
        let data = scenario_data(scenario, seed)?;
        let config = FitConfig { seed, ..FitConfig::new(groups, Variant::TCwm) };
        let detector = fit(&data, &config)?;
        for (refit, out) in [(Variant::GaussianCwm, &mut tg), (Variant::TCwm, &mut tt)] {
            let result = robust_fit_with_detector(&data, &RobustConfig::new(refit, config.clone()), &detector)?;
            out.push(100.0 * result.misclassification_rate.unwrap_or(f64::NAN));
        }
    }
    Ok(RobustCell {
        scenario: scenario.into(),
        groups,
        t_gaussian: tg,
        t_t: tt,
        reference,
        seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn robust_cells(seeds: &[u64]) -> CliResult<Vec<RobustCell>> {
    REFERENCE_ROBUST.iter().map(|&(name, g, reference)| robust_cell(name, g, reference, seeds)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CrabRow {
    pub constant: f64,
    /// Percent.
    pub t_cwm: f64,
    pub fmt: f64,
    pub reference_t_cwm: f64,
    pub reference_fmt: f64,
}

fn crab_eta(data: &Dataset, variant: Variant, seed: u64) -> CliResult<(f64, FitResult)> {
    let config = FitConfig { seed, n_starts: CRAB_STARTS, init: InitStrategy::RandomPartition, ..FitConfig::new(2, variant) };
    let result = fit(data, &config)?;
    let truth = data.labels().expect("crab data is labelled");
    let predicted: Vec<Label> = result.classification.iter().map(|&g| Label::Group(g)).collect();
    Ok((100.0 * misclassification(truth, &predicted, 2)?.eta, result))
}

/// t_cwm and fmt with two groups on the perturbed crab sample, one row per constant.
pub fn crab_study(data: &Dataset, seed: u64) -> CliResult<Vec<CrabRow>> {
    CRAB_CONSTANTS
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let perturbed = crab_perturb(data, c)?;
            Ok(CrabRow {
                constant: c,
                t_cwm: crab_eta(&perturbed, Variant::TCwm, seed)?.0,
                fmt: crab_eta(&perturbed, Variant::Fmt, seed)?.0,
                reference_t_cwm: REFERENCE_CRAB_T_CWM[k],
                reference_fmt: REFERENCE_CRAB_FMT[k],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BicRun {
    pub seed: u64,
    pub gaussian_cwm: f64,
    pub fmr: f64,
}

/// Joint-scale BIC of gaussian_cwm and fmr with three groups on `ex2`.
pub fn bic_nesting(seeds: &[u64]) -> CliResult<Vec<BicRun>> {
    seeds
        .iter()
        .map(|&seed| {
            let data = scenario_data("ex2", seed)?;
            let bic_of = |variant| -> CliResult<f64> {
                let result = fit(&data, &FitConfig { seed, ..FitConfig::new(3, variant) })?;
                Ok(joint_bic(&result, &data)?)
            };
            Ok(BicRun { seed, gaussian_cwm: bic_of(Variant::GaussianCwm)?, fmr: bic_of(Variant::Fmr)? })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproReport {
    pub seeds: Vec<u64>,
    pub example1: Example1Report,
    pub example3: Example3Report,
    pub robust: Vec<RobustCell>,
    pub bic: Vec<BicRun>,
    pub crab: Option<Vec<CrabRow>>,
}

pub fn reproduce(seeds: &[u64], crab: Option<&Dataset>) -> CliResult<ReproReport> {
    Ok(ReproReport {
        seeds: seeds.to_vec(),
        example1: example1(seeds)?,
        example3: example3(seeds)?,
        robust: robust_cells(seeds)?,
        bic: bic_nesting(seeds)?,
        crab: crab.map(|d| crab_study(d, 0)).transpose()?,
    })
}

impl ReproReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let n = self.seeds.len();
        let _ = writeln!(s, "# Reproduction report\n\nMedians over {n} seeds; η in percent.\n");

        let _ = writeln!(s, "## Example 1 (G = 2)\n");
        let _ = writeln!(s, "| model | η | reference η | Λ | reference Λ | ℰ | reference ℰ |\n|---|---|---|---|---|---|---|");
        for (name, runs, reference) in [("gaussian_cwm", &self.example1.cwm, REFERENCE_EX1_CWM), ("fmr", &self.example1.fmr, REFERENCE_EX1_FMR)] {
            let _ = writeln!(
                s,
                "| {name} | {:.2} | {:.2} | {:.4} | {:.4} | {:.3} | {:.3} |",
                runs.median_eta(),
                reference.0,
                runs.median_lambda(),
                reference.1,
                runs.median_iwf(),
                reference.2
            );
        }

        let _ = writeln!(s, "\n## Example 3 (G = 3)\n");
        let _ = writeln!(s, "| model | init | median η | max η | min η | reference η |\n|---|---|---|---|---|---|");
        let ex3 = &self.example3;
        for (runs, reference) in [(&ex3.cwm, REFERENCE_EX3_ETA[0]), (&ex3.fmr, REFERENCE_EX3_ETA[1]), (&ex3.fmrc, REFERENCE_EX3_ETA[2]), (&ex3.fmrc_random, REFERENCE_EX3_ETA[2])] {
            let etas = runs.etas();
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {reference:.2} |",
                runs.variant,
                init_name(runs.init),
                median(&etas),
                etas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                etas.iter().copied().fold(f64::INFINITY, f64::min),
            );
        }
        let gap = ex3.gap_holds();
        let _ = writeln!(s, "\nCWM below FMR and FMRC in {} of {n} seeds.", gap.iter().filter(|&&g| g).count());

        let _ = writeln!(s, "\n## Robust pipeline (α = 0.05)\n");
        let _ = writeln!(s, "| scenario | tG | reference tG | tt | reference tt | seconds |\n|---|---|---|---|---|---|");
        for cell in &self.robust {
            let [g, t] = cell.medians();
            let _ = writeln!(
                s,
                "| {} | {g:.2} | {:.2} | {t:.2} | {:.2} | {:.1} |",
                cell.scenario, cell.reference[0], cell.reference[1], cell.seconds
            );
        }

        let wins = self.bic.iter().filter(|b| b.gaussian_cwm < b.fmr).count();
        let _ = writeln!(s, "\n## BIC nesting (ex2, G = 3)\n\nBIC(gaussian_cwm) < BIC(fmr) in {wins} of {} seeds.", self.bic.len());

        let _ = writeln!(s, "\n## Crab data (G = 2)\n");
        match &self.crab {
            None => {
                let _ = writeln!(s, "Skipped: no crab file given.");
            }
            Some(rows) => {
                let _ = writeln!(s, "| constant | fmt | reference fmt | t_cwm | reference t_cwm |\n|---|---|---|---|---|");
                for r in rows {
                    let _ = writeln!(s, "| {} | {:.0} | {:.0} | {:.0} | {:.0} |", r.constant, r.fmt, r.reference_fmt, r.t_cwm, r.reference_t_cwm);
                }
            }
        }
        s
    }
}

pub fn init_name(init: InitStrategy) -> &'static str {
    match init {
        InitStrategy::Kmeans => "kmeans",
        InitStrategy::RandomPartition => "random",
        InitStrategy::GivenLabels => "given_labels",
    }
}
