//! Subcommands of the `cwm` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cwm::datagen::{builtin_scenario, crab_perturb, generate, ScenarioSpec, BUILTIN_NAMES};
use cwm::em::{fit, DofMode, FitConfig, FitResult, InitStrategy};
use cwm::metrics::evaluate;
use cwm::robust::{robust_fit, RobustConfig, RuleSpace};
use cwm::surfaces::{classify_surface, extract_contour, Plane, Window, DEFAULT_RESOLUTION};
use cwm::{CwmModel, Dataset, Label, Variant};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::io::{file_sha256, load_crab_csv, read_dataset, write_dataset, write_text, CRAB_SHA256};
use crate::manifest::{sidecar_path, ManifestBuilder};
use crate::repro;

#[derive(Debug, Parser)]
#[command(name = "cwm", version, about = "Cluster-weighted modeling: simulate, fit, trim outliers and trace decision surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a built-in scenario or a JSON scenario spec to CSV.
    Generate(GenerateArgs),
    /// Fit one model variant and report metrics.
    Fit(FitArgs),
    /// Three-step robust fit with a noise class.
    RobustFit(RobustArgs),
    /// Trace the two-group decision surface of a fitted model.
    Surface(SurfaceArgs),
    /// Convert (and optionally subsample or perturb) the crab measurement file.
    Crab(CrabArgs),
    /// Rerun the simulation tables with fixed seeds.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct ScenarioSource {
    /// Built-in scenario name.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario spec as JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Overrides the seed stored in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitFlags {
    /// Input CSV with columns x1..xd, y and optional label.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub starts: Option<usize>,
    /// `estimate` or a fixed positive value.
    #[arg(long)]
    pub dof: Option<String>,
    /// `kmeans`, `random` or `given_labels`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative log-likelihood tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Hold the mixing weights at 1/G.
    #[arg(long)]
    pub equal_weights: bool,
    /// JSON fit configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    /// Refit variant: gaussian_cwm (tG) or t_cwm (tt).
    #[arg(long, default_value = "t_cwm")]
    pub variant: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Apply the distance rule to x only instead of (x, y).
    #[arg(long)]
    pub x_only: bool,
    /// Skip the re-check of retained rows against the refit.
    #[arg(long)]
    pub no_recheck: bool,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Model JSON written by `fit` or `robust-fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// `h_min,h_max,v_min,v_max` in plane coordinates.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Data for the default window and the SVG scatter.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// For two covariates: `y=v` (x1 against x2), `x1=v` or `x2=v` (the other covariate against y).
    #[arg(long)]
    pub slice: Option<String>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: usize,
    /// Contour CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrabArgs {
    /// Crab measurement CSV (columns FL, RW, CL, CW, BD, sex).
    #[arg(long)]
    pub data: PathBuf,
    /// Keep the first 50 males and 50 females in file order.
    #[arg(long)]
    pub subsample: bool,
    /// Constant added to the second covariate of the 25th row.
    #[arg(long, allow_negative_numbers = true)]
    pub perturb: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Crab measurement CSV; the crab table is skipped without it.
    #[arg(long)]
    pub crab: Option<PathBuf>,
    /// Output directory for report.md and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
        usage(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
    })
}

fn parse_init(s: &str) -> CliResult<InitStrategy> {
    match s.to_ascii_lowercase().as_str() {
        "kmeans" | "k-means" => Ok(InitStrategy::Kmeans),
        "random" | "random_partition" => Ok(InitStrategy::RandomPartition),
        "given_labels" | "labels" => Ok(InitStrategy::GivenLabels),
        _ => Err(usage(format!("unknown init `{s}` (expected kmeans, random or given_labels)"))),
    }
}

fn parse_dof(s: &str) -> CliResult<DofMode> {
    if s.eq_ignore_ascii_case("estimate") {
        return Ok(DofMode::Estimate);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(DofMode::Fixed(v)),
        _ => Err(usage(format!("--dof takes `estimate` or a positive number, got `{s}`"))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("values serialize") + "\n"
}

impl FitFlags {
    /// Config file (if any) overlaid with explicit flags.
    fn resolve(&self, variant: Option<&str>) -> CliResult<FitConfig> {
        let mut config = match &self.config {
            Some(path) => read_json::<FitConfig>(path)?,
            None => FitConfig::default(),
        };
        if let Some(v) = variant {
            config.variant = parse_variant(v)?;
        }
        if let Some(g) = self.groups {
            config.groups = g;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(s) = self.starts {
            config.n_starts = s;
        }
        if let Some(d) = &self.dof {
            config.dof_mode = parse_dof(d)?;
        }
        if let Some(i) = &self.init {
            config.init = parse_init(i)?;
        }
        if let Some(m) = self.max_iter {
            config.max_iter = m;
        }
        if let Some(t) = self.tol {
            config.rel_tol = t;
        }
        if self.equal_weights {
            config.equal_weights = true;
        }
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }
}

/// Runs a parsed command line; `arguments` is recorded in manifests.
pub fn run(cli: Cli, arguments: &[String]) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, arguments),
        Command::Fit(a) => cmd_fit(&a, arguments),
        Command::RobustFit(a) => cmd_robust_fit(&a, arguments),
        Command::Surface(a) => cmd_surface(&a, arguments),
        Command::Crab(a) => cmd_crab(&a, arguments),
        Command::Repro(a) => cmd_repro(&a, arguments),
    }
}

pub fn cmd_generate(args: &GenerateArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("generate", arguments);
    let mut spec: ScenarioSpec = match (&args.source.scenario, &args.source.spec) {
        (Some(name), _) => builtin_scenario(name)
            .map_err(|_| usage(format!("unknown scenario `{name}` (expected one of {})", BUILTIN_NAMES.join(", "))))?,
        (None, Some(path)) => {
            manifest.input(path)?;
            read_json(path)?
        }
        (None, None) => return Err(usage("one of --scenario or --spec is required")),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = generate(&spec)?;
    write_dataset(&data, &args.out)?;
    manifest.output(&args.out);
    manifest.finish(serde_json::to_value(&spec).expect("spec serializes"), Some(spec.seed), &sidecar_path(&args.out))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    variant: Variant,
    groups: usize,
    loglik: f64,
    loglik_trace: &'a [f64],
    converged: bool,
    n_iter: usize,
    start_index: usize,
    dof_estimated: bool,
    dof_at_boundary: bool,
    degenerate_starts: usize,
    /// Maximum-posterior group per row, 1-based.
    classification: Vec<usize>,
    responsibilities: &'a [Vec<f64>],
}

fn fit_summary(result: &FitResult) -> FitSummary<'_> {
    FitSummary {
        variant: result.model.variant(),
        groups: result.model.n_components(),
        loglik: result.loglik(),
        loglik_trace: &result.loglik_trace,
        converged: result.converged,
        n_iter: result.n_iter,
        start_index: result.start_index,
        dof_estimated: result.dof_estimated,
        dof_at_boundary: result.dof_at_boundary,
        degenerate_starts: result.degenerate_starts,
        classification: result.classification.iter().map(|g| g + 1).collect(),
        responsibilities: &result.responsibilities,
    }
}

fn degenerate_or(e: cwm::CwmError) -> CliError {
    match e {
        cwm::CwmError::Degenerate(m) => CliError::Degenerate(m),
        cwm::CwmError::InvalidParameter(m) => CliError::Usage(m),
        other => CliError::Model(other),
    }
}

fn write_output(manifest: &mut ManifestBuilder, path: &Path, text: &str) -> CliResult<()> {
    write_text(path, text)?;
    manifest.output(path);
    Ok(())
}

pub fn cmd_fit(args: &FitArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("fit", arguments);
    let config = args.flags.resolve(args.variant.as_deref())?;
    let data = read_dataset(&args.flags.data)?;
    manifest.input(&args.flags.data)?;
    if let Some(path) = &args.flags.config {
        manifest.input(path)?;
    }
    let result = fit(&data, &config).map_err(degenerate_or)?;
    let metrics = evaluate(&data, &result)?;
    let out = &args.flags.out;
    write_output(&mut manifest, &out.join("model.json"), &to_json(&result.model))?;
    write_output(&mut manifest, &out.join("fit.json"), &to_json(&fit_summary(&result)))?;
    write_output(&mut manifest, &out.join("metrics.json"), &to_json(&metrics))?;
    manifest.finish(serde_json::to_value(&config).expect("config serializes"), Some(config.seed), &out.join("manifest.json"))?;
    eprintln!(
        "{}: loglik {:.6}, {} iterations{}",
        config.variant,
        result.loglik(),
        result.n_iter,
        metrics.misclassification_rate.map_or(String::new(), |e| format!(", misclassification {:.2}%", 100.0 * e))
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RobustSummary<'a> {
    alpha: f64,
    threshold: f64,
    detector_variant: Variant,
    refit_variant: Variant,
    /// 1-based rows flagged by the first-step rule.
    outlier_rows: Vec<usize>,
    /// 1-based retained rows moved to noise by the re-check.
    recheck_rows: Vec<usize>,
    /// Final class per row: group number or `noise`.
    labels: &'a [Label],
    misclassification_rate: Option<f64>,
    confusion: Option<&'a Vec<Vec<usize>>>,
    trimmed_loglik: f64,
    warnings: &'a [String],
}

/// Confusion table with a header row; the last class is noise when the table has `G + 1` rows.
pub fn confusion_csv(confusion: &[Vec<usize>], groups: usize) -> String {
    let name = |k: usize| if k < groups { (k + 1).to_string() } else { "noise".to_string() };
    let mut s = String::from("true\\predicted");
    for k in 0..confusion.len() {
        s.push(',');
        s.push_str(&name(k));
    }
    s.push('\n');
    for (k, row) in confusion.iter().enumerate() {
        s.push_str(&name(k));
        for c in row {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_robust_fit(args: &RobustArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("robust-fit", arguments);
    let mut fit_config = args.flags.resolve(None)?;
    fit_config.variant = Variant::TCwm;
    let config = RobustConfig {
        alpha: args.alpha,
        rule_space: if args.x_only { RuleSpace::XOnly } else { RuleSpace::Joint },
        recheck: !args.no_recheck,
        ..RobustConfig::new(parse_variant(&args.variant)?, fit_config)
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = read_dataset(&args.flags.data)?;
    manifest.input(&args.flags.data)?;
    if let Some(path) = &args.flags.config {
        manifest.input(path)?;
    }
    let result = robust_fit(&data, &config).map_err(degenerate_or)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let summary = RobustSummary {
        alpha: config.alpha,
        threshold: result.threshold,
        detector_variant: config.detector_variant,
        refit_variant: config.refit_variant,
        outlier_rows: result.outlier_indices.iter().map(|i| i + 1).collect(),
        recheck_rows: result.recheck_indices.iter().map(|i| i + 1).collect(),
        labels: &result.final_labels,
        misclassification_rate: result.misclassification_rate,
        confusion: result.confusion.as_ref(),
        trimmed_loglik: result.trimmed_fit.loglik(),
        warnings: &result.warnings,
    };
    let out = &args.flags.out;
    write_output(&mut manifest, &out.join("robust.json"), &to_json(&summary))?;
    write_output(&mut manifest, &out.join("model.json"), &to_json(&result.trimmed_fit.model))?;
    if let Some(confusion) = &result.confusion {
        write_output(&mut manifest, &out.join("confusion.csv"), &confusion_csv(confusion, config.fit_config.groups))?;
    }
    manifest.finish(serde_json::to_value(&config).expect("config serializes"), Some(config.fit_config.seed), &out.join("manifest.json"))?;
    let noise = result.final_labels.iter().filter(|l| **l == Label::Noise).count();
    eprintln!(
        "{} rows labelled noise{}",
        noise,
        result.misclassification_rate.map_or(String::new(), |e| format!(", misclassification {:.2}%", 100.0 * e))
    );
    Ok(())
}

/// Parses `--slice` for a model with `d` covariates.
pub fn parse_slice(slice: Option<&str>, d: usize) -> CliResult<Plane> {
    match (d, slice) {
        (1, None) => Ok(Plane::xy()),
        (1, Some(_)) => Err(usage("--slice applies to models with two covariates")),
        (2, None) => Err(usage("a two-covariate model needs --slice y=v, x1=v or x2=v")),
        (2, Some(s)) => {
            let (axis, value) = s.split_once('=').ok_or_else(|| usage(format!("--slice expects axis=value, got `{s}`")))?;
            let value: f64 = value.trim().parse().map_err(|_| usage(format!("--slice value `{value}` is not a number")))?;
            match axis.trim() {
                "y" => Ok(Plane::fixed_y(value)),
                "x1" => Ok(Plane::fixed_x(1, value)),
                "x2" => Ok(Plane::fixed_x(0, value)),
                other => Err(usage(format!("--slice axis must be y, x1 or x2, got `{other}`"))),
            }
        }
        _ => Err(usage(format!("surfaces are traced for one or two covariates, the model has {d}"))),
    }
}

fn parse_window(s: &str) -> CliResult<Window> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--window expects four numbers, got `{s}`")))?;
    if v.len() != 4 {
        return Err(usage(format!("--window expects four numbers, got `{s}`")));
    }
    Window::new([v[0], v[1]], [v[2], v[3]]).map_err(|e| usage(e.to_string()))
}

pub fn cmd_surface(args: &SurfaceArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("surface", arguments);
    let model: CwmModel = read_json(&args.model)?;
    manifest.input(&args.model)?;
    if model.n_components() != 2 {
        return Err(usage(format!("decision surfaces need a two-group model, got G = {}", model.n_components())));
    }
    let plane = parse_slice(args.slice.as_deref(), model.d())?;
    let data: Option<Dataset> = match &args.data {
        Some(path) => {
            manifest.input(path)?;
            let data = read_dataset(path)?;
            if data.d() != model.d() {
                return Err(CliError::Data(format!("data has {} covariates, model has {}", data.d(), model.d())));
            }
            Some(data)
        }
        None => None,
    };
    let window = match (&args.window, &data) {
        (Some(w), _) => parse_window(w)?,
        (None, Some(d)) => Window::around(d, &plane, 0.05)?,
        (None, None) => return Err(usage("give --window or --data")),
    };
    let grid = extract_contour(&model, &plane, window, args.resolution).map_err(|e| usage(e.to_string()))?;
    let kind = classify_surface(&model)?;
    if grid.empty {
        eprintln!("warning: the decision surface does not cross the window; contour is empty");
    }
    write_output(&mut manifest, &args.out, &grid.to_csv())?;
    if let Some(svg) = &args.svg {
        write_output(&mut manifest, svg, &grid.to_svg(data.as_ref()))?;
    }
    let config = json!({
        "plane": grid.plane,
        "window": grid.window,
        "resolution": grid.resolution,
        "surface_kind": kind,
        "polylines": grid.contour.len(),
    });
    manifest.finish(config, None, &sidecar_path(&args.out))?;
    Ok(())
}

pub fn cmd_crab(args: &CrabArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("crab", arguments);
    manifest.input(&args.data)?;
    let digest = file_sha256(&args.data)?;
    if digest != CRAB_SHA256 {
        eprintln!("warning: {} has sha256 {digest}, expected {CRAB_SHA256}", args.data.display());
    }
    let mut data = load_crab_csv(&args.data, args.subsample)?;
    if let Some(c) = args.perturb {
        data = crab_perturb(&data, c)?;
    }
    write_dataset(&data, &args.out)?;
    manifest.output(&args.out);
    let config = json!({ "subsample": args.subsample, "perturb": args.perturb });
    manifest.finish(config, None, &sidecar_path(&args.out))?;
    Ok(())
}

pub fn cmd_repro(args: &ReproArgs, arguments: &[String]) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start("repro", arguments);
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let crab = match &args.crab {
        Some(path) => {
            manifest.input(path)?;
            Some(load_crab_csv(path, true)?)
        }
        None => None,
    };
    let report = repro::reproduce(&seeds, crab.as_ref())?;
    write_output(&mut manifest, &args.out.join("report.md"), &report.to_markdown())?;
    write_output(&mut manifest, &args.out.join("report.json"), &to_json(&report))?;
    manifest.finish(json!({ "seeds": args.seeds }), None, &args.out.join("manifest.json"))?;
    print!("{}", report.to_markdown());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_dof("estimate").unwrap(), DofMode::Estimate);
        assert_eq!(parse_dof("4.5").unwrap(), DofMode::Fixed(4.5));
        assert!(matches!(parse_dof("-1"), Err(CliError::Usage(_))));
        assert_eq!(parse_init("random").unwrap(), InitStrategy::RandomPartition);
        assert!(parse_variant("FMRC").is_ok());
        assert!(matches!(parse_variant("cwm"), Err(CliError::Usage(_))));
    }

    #[test]
    fn slices_by_dimension() {
        assert_eq!(parse_slice(None, 1).unwrap(), Plane::xy());
        assert_eq!(parse_slice(Some("y=3"), 2).unwrap(), Plane::fixed_y(3.0));
        assert_eq!(parse_slice(Some("x2=1"), 2).unwrap(), Plane::fixed_x(0, 1.0));
        assert!(parse_slice(None, 2).is_err());
        assert!(parse_slice(Some("z=1"), 2).is_err());
    }

    #[test]
    fn confusion_layout_names_noise_last() {
        let csv = confusion_csv(&[vec![5, 0, 1], vec![0, 4, 0], vec![1, 0, 2]], 2);
        assert_eq!(csv, "true\\predicted,1,2,noise\n1,5,0,1\n2,0,4,0\nnoise,1,0,2\n");
    }
}
