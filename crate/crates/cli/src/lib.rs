//! Command-line front end: explanations, measure reports, verification
//! suites, the randomization sanity check and graymap rendering.

pub mod files;
pub mod specs;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xinfid::measures::{self, MeasureSelection};
use xinfid::models::load_model;
use xinfid::verify::{self, CheckResult, Suite};
use xinfid::{corpus, BallNorm, Explainer, Locality, MeasureConfig, MeasureReport, Model, RngStream};
use xinfid::{Baseline, PerturbationFamily};

pub use specs::{parse_family, parse_kernel, parse_method, MethodContext};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_PERTURBATION: &str = "noisy-baseline:x0=zero,sigma=0.5";
pub const DEFAULT_KERNEL: &str = "uniform:radius=0.2";

/// Exit status for a run whose checks failed.
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for usage, parse and input errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "xinfid", version, about = "Infidelity and sensitivity of feature attributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one attribution CSV per (input, method).
    Explain(ExplainArgs),
    /// Score methods on a batch of inputs and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Run a verification suite over generated models.
    Verify(VerifyArgs),
    /// Rank correlation of attributions before and after randomizing the last layer.
    SanityCheck(SanityArgs),
    /// Render an attribution CSV as a binary graymap.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run specification; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model JSON file, or `toy` for the two-feature toy function.
    #[arg(long)]
    pub model: Option<String>,
    /// CSV file with one input per row.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// A single input, e.g. "20,11.9". May be repeated.
    #[arg(long = "input", allow_hyphen_values = true)]
    pub input: Vec<String>,
    /// Methods, e.g. grad ig optimal grad-sg occlusion*x.
    #[arg(long = "method", alias = "methods", num_args = 1..)]
    pub methods: Vec<String>,
    /// Perturbation family [default: noisy-baseline:x0=zero,sigma=0.5].
    #[arg(long, alias = "family")]
    pub perturbation: Option<String>,
    /// Smoothing kernel for -sg methods [default: uniform:radius=0.2].
    #[arg(long)]
    pub kernel: Option<String>,
    /// Kernel draws for -sg methods [default: 200].
    #[arg(long)]
    pub smooth_samples: Option<usize>,
    /// Baseline for *x methods and IG/occlusion: zero, a number, or a;b;c.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory for the attribution files [default: .].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_infd: Option<usize>,
    #[arg(long)]
    pub n_sens: Option<usize>,
    /// Sensitivity radius [default: 0.1].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Sensitivity ball: inf or l2.
    #[arg(long)]
    pub ball_norm: Option<String>,
    /// Disable the optimal rescaling before infidelity.
    #[arg(long)]
    pub no_scaling: bool,
    /// Disable unit normalization before sensitivity.
    #[arg(long)]
    pub no_normalization: bool,
    /// Also report the attribution-Jacobian sensitivity.
    #[arg(long)]
    pub sens_grad: bool,
    /// Also report the Lipschitz-style sensitivity.
    #[arg(long)]
    pub sens_lips: bool,
    /// Robust infidelity with this many outer offsets (0 disables).
    #[arg(long, default_value_t = 0)]
    pub rinfd: usize,
    /// Fit optimal methods on the infidelity samples themselves.
    #[arg(long)]
    pub shared_samples: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// all, completeness, smoothing, bounds, rinfd or adversarial.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the records to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SanityArgs {
    /// MLP model JSON; a generated two-layer network is used when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Random inputs to draw when no inputs file is given.
    #[arg(long, default_value_t = 20)]
    pub n_inputs: usize,
    /// Input dimension of the generated network.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long = "method", alias = "methods", num_args = 1.., default_values_t = ["grad".to_string(), "optimal".to_string(), "constant".to_string()])]
    pub methods: Vec<String>,
    #[arg(long, default_value = DEFAULT_PERTURBATION)]
    pub perturbation: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Attribution CSV written by `explain`.
    #[arg(long)]
    pub attr: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run specification as accepted by `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub model: Option<String>,
    pub inputs: Option<PathBuf>,
    pub methods: Vec<String>,
    pub perturbation: Option<String>,
    pub kernel: Option<String>,
    pub smooth_samples: Option<usize>,
    pub baseline: Option<String>,
    pub measures: Option<MeasureConfig>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Everything a run needs, after files are loaded and specs parsed.
pub struct ResolvedRun {
    pub model_name: String,
    pub model: Model,
    pub inputs: Vec<Vec<f64>>,
    pub method_names: Vec<String>,
    pub methods: Vec<Explainer>,
    pub perturbation: String,
    pub family: PerturbationFamily,
    pub seed: u64,
    pub spec: RunSpec,
}

pub fn load_model_arg(name: &str) -> Result<Model> {
    if name == "toy" {
        return Ok(Model::Toy(xinfid::models::ToyFunction));
    }
    load_model(Path::new(name)).map_err(Into::into)
}

fn load_spec(run: &RunArgs) -> Result<RunSpec> {
    let mut spec = match &run.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunSpec::default(),
    };
    if run.model.is_some() {
        spec.model = run.model.clone();
    }
    if run.inputs.is_some() {
        spec.inputs = run.inputs.clone();
    }
    if !run.methods.is_empty() {
        spec.methods = run.methods.clone();
    }
    macro_rules! overlay {
        ($($field:ident),*) => { $( if run.$field.is_some() { spec.$field = run.$field.clone(); } )* };
    }
    overlay!(perturbation, kernel, smooth_samples, baseline, seed);
    Ok(spec)
}

pub fn resolve(run: &RunArgs) -> Result<ResolvedRun> {
    let spec = load_spec(run)?;
    let model_name = spec.model.clone().context("no model given (use --model PATH or --model toy)")?;
    let model = load_model_arg(&model_name)?;
    let mut inputs = match &spec.inputs {
        Some(path) => files::read_inputs(path)?,
        None => Vec::new(),
    };
    for text in &run.input {
        inputs.push(files::parse_input(text)?);
    }
    if inputs.is_empty() {
        bail!("no inputs given (use --inputs FILE or --input \"a,b,...\")");
    }
    let d = xinfid::Predictor::input_dim(&model);
    for (k, x) in inputs.iter().enumerate() {
        if x.len() != d {
            bail!("input {k} has {} values but the model expects {d}", x.len());
        }
    }
    if spec.methods.is_empty() {
        bail!("no methods given (use --method grad ...)");
    }
    let perturbation = spec.perturbation.clone().unwrap_or_else(|| DEFAULT_PERTURBATION.to_string());
    let family = parse_family(&perturbation)?;
    family.validate(d).with_context(|| format!("perturbation {perturbation:?}"))?;
    let ctx = MethodContext {
        family: family.clone(),
        kernel: parse_kernel(spec.kernel.as_deref().unwrap_or(DEFAULT_KERNEL))?,
        smooth_samples: spec.smooth_samples.unwrap_or(xinfid::explainers::DEFAULT_SMOOTH_SAMPLES),
        baseline: spec.baseline.as_deref().map(specs::parse_baseline).transpose()?.unwrap_or(Baseline::Zero),
    };
    let methods = spec.methods.iter().map(|m| parse_method(m, &ctx)).collect::<Result<Vec<_>>>()?;
    Ok(ResolvedRun {
        model_name,
        model,
        inputs,
        method_names: spec.methods.clone(),
        methods,
        perturbation,
        family,
        seed: spec.seed.unwrap_or(0),
        spec,
    })
}

fn file_tag(tag: &str) -> String {
    tag.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Attribution for input `k`, drawing from the stream `(seed, k)`.
fn explain_input(run: &ResolvedRun, method: &Explainer, k: usize) -> Result<xinfid::Attribution> {
    let rng = RngStream::new(run.seed, k as u64);
    method.explain(&run.model, &run.inputs[k], &rng).with_context(|| format!("input {k}, method {}", method.tag()))
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<Vec<PathBuf>> {
    let run = resolve(&args.run)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let jobs: Vec<(usize, usize)> =
        (0..run.inputs.len()).flat_map(|k| (0..run.methods.len()).map(move |m| (k, m))).collect();
    jobs.par_iter()
        .map(|&(k, m)| {
            let attr = explain_input(&run, &run.methods[m], k)?;
            let path = out_dir.join(format!("attr-{k:04}-{}.csv", file_tag(&attr.method)));
            files::write_atomic(&path, files::attribution_csv(&attr, run.seed).as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub input_index: usize,
    #[serde(flatten)]
    pub report: MeasureReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_inputs: usize,
    pub mean_infidelity: f64,
    pub mean_sens_max: f64,
    pub mean_sens_grad: Option<f64>,
    pub mean_sens_lips: Option<f64>,
    pub mean_rinfd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub model: String,
    pub perturbation: String,
    pub seed: u64,
    pub config: MeasureConfig,
    pub selection: MeasureSelection,
    pub records: Vec<ReportRecord>,
    pub summary: Vec<MethodSummary>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_opt(values: Vec<Option<f64>>) -> Option<f64> {
    values.into_iter().collect::<Option<Vec<f64>>>().map(|v| mean_of(v.into_iter()))
}

/// Per-method means in input order.
pub fn summarize(records: &[ReportRecord], methods: &[String]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&MeasureReport> = records.iter().map(|r| &r.report).filter(|r| &r.method == m).collect();
            MethodSummary {
                method: m.clone(),
                n_inputs: rows.len(),
                mean_infidelity: mean_of(rows.iter().map(|r| r.infidelity)),
                mean_sens_max: mean_of(rows.iter().map(|r| r.sens_max)),
                mean_sens_grad: mean_opt(rows.iter().map(|r| r.sens_grad).collect()),
                mean_sens_lips: mean_opt(rows.iter().map(|r| r.sens_lips).collect()),
                mean_rinfd: mean_opt(rows.iter().map(|r| r.rinfd).collect()),
            }
        })
        .collect()
}

fn measure_config(args: &EvaluateArgs, spec: &RunSpec, seed: u64) -> Result<MeasureConfig> {
    let mut cfg = spec.measures.clone().unwrap_or_default();
    if let Some(n) = args.n_infd {
        cfg.n_infd = n;
    }
    if let Some(n) = args.n_sens {
        cfg.n_sens = n;
    }
    if let Some(r) = args.radius {
        cfg.radius = r;
    }
    if let Some(b) = &args.ball_norm {
        cfg.ball_norm = match b.as_str() {
            "inf" => BallNorm::Inf,
            "l2" => BallNorm::L2,
            other => bail!("unknown ball norm {other:?} (expected inf or l2)"),
        };
    }
    if args.no_scaling {
        cfg.apply_optimal_scaling = false;
    }
    if args.no_normalization {
        cfg.apply_unit_normalization = false;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Rejects methods whose attributions cannot be scored against the family.
pub fn check_compatibility(methods: &[Explainer], family: &PerturbationFamily, perturbation: &str) -> Result<()> {
    for m in methods {
        if m.locality() == Locality::Global && !family.has_masks() {
            bail!(
                "method {} gives a global attribution, but perturbation {perturbation:?} has no masks; \
                 use a mask family (square, shapley, coord-x) or a local method",
                m.tag()
            );
        }
    }
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Report> {
    let run = resolve(&args.run)?;
    check_compatibility(&run.methods, &run.family, &run.perturbation)?;
    let cfg = measure_config(args, &run.spec, run.seed)?;
    let selection = MeasureSelection {
        sens_grad: args.sens_grad,
        sens_lips: args.sens_lips,
        rinfd_outer: args.rinfd,
        shared_samples: args.shared_samples,
    };
    let sets = (0..run.inputs.len())
        .into_par_iter()
        .map(|k| {
            let rng = RngStream::new(run.seed, k as u64);
            measures::record_samples(&run.model, &run.family, &run.inputs[k], &cfg, &rng)
                .with_context(|| format!("input {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..run.inputs.len()).flat_map(|k| (0..run.methods.len()).map(move |m| (k, m))).collect();
    let records = jobs
        .par_iter()
        .map(|&(k, m)| {
            let rng = RngStream::new(run.seed, k as u64);
            let method = &run.methods[m];
            let report = measures::measure(&run.model, method, &run.inputs[k], &run.family, &sets[k], &cfg, &selection, &rng)
                .with_context(|| format!("input {k}, method {}", method.tag()))?;
            Ok(ReportRecord { input_index: k, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let tags: Vec<String> = run.methods.iter().map(Explainer::tag).collect();
    let mut unique = Vec::new();
    for t in tags {
        if !unique.contains(&t) {
            unique.push(t);
        }
    }
    let summary = summarize(&records, &unique);
    let report = Report {
        format_version: REPORT_FORMAT_VERSION,
        model: run.model_name.clone(),
        perturbation: run.perturbation.clone(),
        seed: run.seed,
        config: cfg,
        selection,
        records,
        summary,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match args.out.as_ref().or(run.spec.out.as_ref()) {
        Some(path) => files::write_atomic(path, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(report)
}

/// Writes one JSON line per check and returns whether every applicable check passed.
pub fn report_checks(checks: &[CheckResult], out: &mut dyn Write) -> Result<bool> {
    for c in checks {
        writeln!(out, "{}", serde_json::to_string(c)?)?;
    }
    Ok(checks.iter().all(|c| !c.failed()))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let suite: Suite = args.suite.parse()?;
    let checks = verify::run_suite(suite, args.seed)?;
    let mut buf = Vec::new();
    let ok = report_checks(&checks, &mut buf)?;
    std::io::stdout().write_all(&buf)?;
    if let Some(path) = &args.out {
        files::write_atomic(path, &buf)?;
    }
    let failed: Vec<&CheckResult> = checks.iter().filter(|c| c.failed()).collect();
    let skipped = checks.iter().filter(|c| !c.applicable).count();
    for c in &failed {
        eprintln!("{c}");
    }
    eprintln!(
        "{} checks: {} passed, {} failed, {skipped} not applicable",
        checks.len(),
        checks.len() - failed.len() - skipped,
        failed.len()
    );
    Ok(ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityOutput {
    pub method: String,
    pub corr: f64,
    pub corr_abs: f64,
    pub degenerate: usize,
    /// `|corr| ≥ 0.5`: the attribution barely reacts to randomizing the model.
    pub flagged: bool,
}

pub const SANITY_FLAG_THRESHOLD: f64 = 0.5;

pub fn cmd_sanity(args: &SanityArgs) -> Result<Vec<SanityOutput>> {
    let mlp = match &args.model {
        Some(path) => match load_model(path)? {
            Model::Mlp(m) => m,
            _ => bail!("{}: the sanity check needs an MLP model", path.display()),
        },
        None => corpus::classifier_mlp(&mut RngStream::new(args.seed, 0), args.dim, args.hidden, 1),
    };
    let inputs = match &args.inputs {
        Some(path) => files::read_inputs(path)?,
        None => {
            let root = RngStream::new(args.seed, 1);
            (0..args.n_inputs as u64).map(|k| corpus::random_input(&mut root.substream(k), mlp.input_dim())).collect()
        }
    };
    let family = parse_family(&args.perturbation)?;
    let ctx = MethodContext {
        family,
        kernel: parse_kernel(DEFAULT_KERNEL)?,
        smooth_samples: xinfid::explainers::DEFAULT_SMOOTH_SAMPLES,
        baseline: Baseline::Zero,
    };
    let methods = args.methods.iter().map(|m| parse_method(m, &ctx)).collect::<Result<Vec<_>>>()?;
    let rows = verify::run_sanity_check(&mlp, &inputs, &methods, &RngStream::new(args.seed, 2))?;
    let out: Vec<SanityOutput> = rows
        .into_iter()
        .map(|r| SanityOutput {
            flagged: r.corr.abs() >= SANITY_FLAG_THRESHOLD,
            method: r.method,
            corr: r.corr,
            corr_abs: r.corr_abs,
            degenerate: r.degenerate,
        })
        .collect();
    let text = serde_json::to_string_pretty(&out)? + "\n";
    match &args.out {
        Some(path) => files::write_atomic(path, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(out)
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let values = files::read_attribution(&args.attr)?;
    let bytes = files::render_pgm(&values, args.height, args.width)?;
    files::write_atomic(&args.out, &bytes)
}

/// Sizes the global worker pool from `XINFID_THREADS` (unset or 0 = one per core).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("XINFID_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse::<usize>().with_context(|| format!("XINFID_THREADS={v:?} is not a count"))?
        }
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    Ok(())
}

/// Runs a parsed command and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Explain(a) => cmd_explain(a).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            true
        }),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::SanityCheck(a) => cmd_sanity(a).map(|_| true),
        Command::Render(a) => cmd_render(a).map(|()| true),
    });
    match result {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
