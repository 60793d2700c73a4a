//! Executable checks of the identities and inequalities relating attributions,
//! infidelity and sensitivity, plus a suite runner over generated corpora.
//!
//! Inner suprema are sampled maxima. Both sides of an inequality maximize
//! over the same candidate set so sampling noise cannot flip the outcome.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusEntry};
use crate::error::{invalid, Error, Result};
use crate::explainers::{Explainer, SmoothingKernel};
use crate::models::{hessian_norm_bound, softplus, MlpModel, Model, Predictor};
use crate::numerics::{self, RngStream};
use crate::perturbations::{Baseline, PerturbationFamily, SampleSet};
use crate::measures::{self, BallNorm, MeasureConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Passes iff `|lhs − rhs| ≤ slack`.
    Equality,
    /// Passes iff `lhs ≤ rhs + slack`.
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    /// False when the check's hypothesis does not hold; `passed` is then vacuous.
    pub applicable: bool,
    pub passed: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub context: String,
}

impl CheckResult {
    pub fn equality(name: &str, lhs: f64, rhs: f64, slack: f64, context: String) -> Self {
        let passed = (lhs - rhs).abs() <= slack;
        Self { name: name.into(), kind: CheckKind::Equality, applicable: true, passed, lhs, rhs, slack, context }
    }

    pub fn inequality(name: &str, lhs: f64, rhs: f64, slack: f64, context: String) -> Self {
        let passed = lhs <= rhs + slack;
        Self { name: name.into(), kind: CheckKind::Inequality, applicable: true, passed, lhs, rhs, slack, context }
    }

    pub fn not_applicable(mut self, reason: &str) -> Self {
        self.applicable = false;
        self.passed = true;
        self.context = format!("{}; not applicable: {reason}", self.context);
        self
    }

    /// Applicable and failed.
    pub fn failed(&self) -> bool {
        self.applicable && !self.passed
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.applicable, self.passed) {
            (false, _) => "SKIP",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        let op = match self.kind {
            CheckKind::Equality => "==",
            CheckKind::Inequality => "<=",
        };
        write!(
            f,
            "{status} {} lhs={:.6e} {op} rhs={:.6e} (slack {:.1e}) [{}]",
            self.name, self.lhs, self.rhs, self.slack, self.context
        )
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|a| format!("{a:.4}")).collect();
    format!("({})", parts.join(","))
}

/// Sum of the optimal explanation times `I = x − x0` against `f(x) − f(x0)`.
pub fn check_completeness(model: &dyn Predictor, x: &[f64], x0: &[f64]) -> Result<CheckResult> {
    let family = PerturbationFamily::BaselineDiff { x0: Baseline::Vector(x0.to_vec()) };
    let explainer = Explainer::Optimal { family, n: 1, lambda: Some(1e-10) };
    let phi = explainer.explain(model, x, &RngStream::new(0, 0))?;
    let i_vec = numerics::sub(x, x0);
    let lhs = numerics::dot(&phi.values, &i_vec);
    let rhs = model.evaluate(x)? - model.evaluate(x0)?;
    Ok(CheckResult::equality("completeness", lhs, rhs, 1e-6, format!("x={}", fmt_vec(x))))
}

/// Sensitivity of the smoothed explainer against the kernel average of the
/// base explainer's sensitivity.
///
/// Uses raw attributions: the smoothed attribution at `y` averages the base
/// attribution at `y + ξ_j` over shared kernel offsets `ξ_j`, and every side
/// uses the same ball offsets, so the inequality holds draw by draw.
pub fn check_smoothing_sensitivity(
    model: &dyn Predictor,
    explainer: &Explainer,
    kernel: &SmoothingKernel,
    x: &[f64],
    cfg: &MeasureConfig,
    n_kernel: usize,
    rng: &RngStream,
) -> Result<CheckResult> {
    let cfg = cfg.raw();
    let offsets = measures::ball_offsets(&cfg, x.len(), cfg.n_sens, rng)?;
    let smoothed = explainer.clone().smooth(*kernel, n_kernel);
    let lhs = measures::sensitivity_on_offsets(&smoothed, model, x, &offsets, &cfg, rng)?.max;
    // the same kernel draws the smoothed explainer makes
    let krng = rng.substream(1);
    let per_z = (0..n_kernel as u64)
        .into_par_iter()
        .map(|j| {
            let mut sub = krng.substream(j);
            let z = kernel.sample(&mut sub, x)?;
            let base = FixedStream { inner: explainer, rng: sub.substream(1) };
            base.sens_max(model, &z, &offsets, &cfg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (rhs, se) = numerics::mean_and_stderr(&per_z);
    Ok(CheckResult::inequality(
        "smoothing-sensitivity",
        lhs,
        rhs,
        3.0 * se,
        format!("x={} kernel={kernel:?} n_kernel={n_kernel}", fmt_vec(x)),
    ))
}

/// The base explainer evaluated with the stream the smoothed explainer hands it.
struct FixedStream<'a> {
    inner: &'a Explainer,
    rng: RngStream,
}

impl FixedStream<'_> {
    fn sens_max(&self, model: &dyn Predictor, z: &[f64], offsets: &[Vec<f64>], cfg: &MeasureConfig) -> Result<f64> {
        let center = self.inner.explain(model, z, &self.rng)?.values;
        let mut best: f64 = 0.0;
        for u in offsets {
            let phi = self.inner.explain(model, &numerics::add(z, u), &self.rng)?.values;
            let diff = if cfg.apply_unit_normalization {
                let (a, _) = measures::unit_normalize(&phi);
                let (b, _) = measures::unit_normalize(&center);
                numerics::norm2(&numerics::sub(&a, &b))
            } else {
                numerics::norm2(&numerics::sub(&phi, &center))
            };
            best = best.max(diff);
        }
        Ok(best)
    }
}

/// Unscaled infidelity of the smoothed explainer against
/// `C2/(1 − 2√C1)` times the kernel average of the base infidelity.
///
/// Not applicable when `C1 > 1/√2` or when `1 − 2√C1 ≤ 0`.
#[allow(clippy::too_many_arguments)]
pub fn check_smoothing_infidelity(
    model: &dyn Predictor,
    explainer: &Explainer,
    kernel: &SmoothingKernel,
    family: &PerturbationFamily,
    x: &[f64],
    n: usize,
    rng: &RngStream,
) -> Result<(CheckResult, measures::SmoothingConstants)> {
    let c = measures::smoothing_constants(model, explainer, x, family, kernel, n, rng)?;
    let factor = 1.0 - 2.0 * c.c1.sqrt();
    let context = format!("x={} kernel={kernel:?} C1={:.4} C2={:.4}", fmt_vec(x), c.c1, c.c2);
    let slack = 3.0 * (c.smoothed_infidelity_se.powi(2) + c.base_infidelity_se.powi(2)).sqrt();
    let result = if c.c1 > std::f64::consts::FRAC_1_SQRT_2 || factor <= 0.0 {
        CheckResult::inequality("smoothing-infidelity", c.smoothed_infidelity, f64::INFINITY, slack, context)
            .not_applicable("C1 too large for a finite constant")
    } else {
        let rhs = c.c2 / factor * c.base_infidelity;
        CheckResult::inequality("smoothing-infidelity", c.smoothed_infidelity, rhs, slack, context)
    };
    Ok((result, c))
}

/// `C2 ≤ 1` within three standard errors.
pub fn check_c2_jensen(c: &measures::SmoothingConstants, context: &str) -> CheckResult {
    CheckResult::inequality("c2-jensen", c.c2, 1.0, 3.0 * c.c2_se, context.into())
}

/// Raw-gradient max-sensitivity against `∏ ‖W_i‖²/4 · r` on the Euclidean ball.
pub fn check_softplus_bound(model: &MlpModel, cfg: &MeasureConfig, rng: &RngStream, x: &[f64]) -> Result<CheckResult> {
    let bound = model.softplus_sensitivity_bound(cfg.radius)?;
    let cfg = MeasureConfig { ball_norm: BallNorm::L2, ..cfg.raw() };
    let m = Model::Mlp(model.clone());
    let lhs = measures::sens_max(&Explainer::Gradient, &m, x, &cfg, rng)?;
    Ok(CheckResult::inequality(
        "softplus-bound",
        lhs,
        bound,
        1e-12,
        format!("x={} layers={} r={}", fmt_vec(x), model.layers().len(), cfg.radius),
    ))
}

/// Infidelity and sensitivity bounds of the gradient on a quadratic model with
/// Hessian norm `L`: `INFD ≤ E‖I‖⁴ L²/2` and `SENS_MAX ≤ L r` (Euclidean ball).
pub fn check_hessian_bounds(
    model: &Model,
    family: &PerturbationFamily,
    x: &[f64],
    cfg: &MeasureConfig,
    rng: &RngStream,
) -> Result<(CheckResult, CheckResult)> {
    let Model::Quadratic(q) = model else {
        return Err(Error::Hypothesis("Hessian bounds need a quadratic model".into()));
    };
    let l = q.hessian_norm();
    let raw = cfg.raw();
    let set = measures::record_samples(model, family, x, &raw, rng)?;
    let grad = Explainer::Gradient.explain(model, x, rng)?;
    let rho = measures::projections(&grad, &set)?;
    let diffs: Vec<f64> = set
        .samples
        .iter()
        .zip(rho.iter().zip(&set.delta_f))
        .map(|(s, (r, d))| (r - d).powi(2) - 0.5 * l * l * numerics::norm2(&s.i_vec).powi(4))
        .collect();
    let lhs = rho.iter().zip(&set.delta_f).map(|(r, d)| (r - d).powi(2)).sum::<f64>() / rho.len() as f64;
    let fourth = set.samples.iter().map(|s| numerics::norm2(&s.i_vec).powi(4)).sum::<f64>() / rho.len() as f64;
    let se = numerics::mean_and_stderr(&diffs).1;
    let context = format!("x={} L={l:.4}", fmt_vec(x));
    let rhs = fourth * l * l / 2.0;
    // floating-point floor for the L = 0 case, where the residual is pure roundoff
    let slack = 3.0 * se + 1e-12 * (1.0 + rhs);
    let infd = CheckResult::inequality("hessian-infidelity", lhs, rhs, slack, context.clone());

    let sens_cfg = MeasureConfig { ball_norm: BallNorm::L2, ..raw };
    let sens = measures::sens_max(&Explainer::Gradient, model, x, &sens_cfg, rng)?;
    let sens_check = CheckResult::inequality("hessian-sensitivity", sens, l * cfg.radius, 1e-12, context);
    Ok((infd, sens_check))
}

/// Robust infidelity against `max(0, (Â − B̂₁ − B̂₂)/2)²` on shared offsets and perturbations.
pub fn check_rinfd_lower_bound(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    cfg: &MeasureConfig,
    n_outer: usize,
    rng: &RngStream,
) -> Result<CheckResult> {
    let cfg = cfg.raw();
    let robust = measures::robust_infidelity(model, explainer, x, family, &cfg, n_outer, rng)?;
    let base = measures::record_samples(model, family, x, &cfg, rng)?;
    let offsets = measures::outer_offsets(&cfg, x.len(), n_outer, rng)?;
    let erng = rng.substream(1);
    let phi_x = explainer.explain(model, x, &erng)?.values;
    let fx = base.fx;
    let f_minus: Vec<f64> = base.delta_f.iter().map(|d| fx - d).collect();
    let terms = offsets
        .par_iter()
        .map(|u| {
            let y = numerics::add(x, u);
            let phi_y = explainer.explain(model, &y, &erng)?.values;
            let fy = model.evaluate(&y)?;
            let n = base.len() as f64;
            let mut a = 0.0;
            let mut b2 = 0.0;
            for (s, fm) in base.samples.iter().zip(&f_minus) {
                a += (numerics::dot(&s.i_vec, &phi_y) - numerics::dot(&s.i_vec, &phi_x)).abs();
                b2 += (model.evaluate(&numerics::sub(&y, &s.i_vec))? - fm).abs();
            }
            Ok((a / n, (fy - fx).abs(), b2 / n))
        })
        .collect::<Result<Vec<_>>>()?;
    let a_hat = terms.iter().map(|t| t.0).fold(0.0, f64::max);
    let b1_hat = terms.iter().map(|t| t.1).fold(0.0, f64::max);
    let b2_hat = terms.iter().map(|t| t.2).fold(0.0, f64::max);
    let rhs = ((a_hat - b1_hat - b2_hat) / 2.0).max(0.0).powi(2);
    // the bound is the reverse inequality: rhs ≤ RINFD
    Ok(CheckResult::inequality(
        "rinfd-lower-bound",
        rhs,
        robust.value,
        3.0 * robust.std_error,
        format!("x={} A={a_hat:.4} B1={b1_hat:.4} B2={b2_hat:.4}", fmt_vec(x)),
    ))
}

/// Logistic loss `−log(e^{y f}/(1 + e^f))` for labels `y ∈ {0, 1}`.
pub fn logistic_loss(f: f64, y: f64) -> f64 {
    softplus(f) - y * f
}

/// Worst sampled logistic loss in the L∞ ball against
/// `ℓ(f(x)) + ε‖∇f(x)‖₁ + (ε²/2)·d·L`, with `L` the Hessian norm bound.
///
/// Probes: the corners `±ε·sign(∇f(x))` and `n_probe` uniform box points.
pub fn check_adversarial_bound(
    model: &Model,
    x: &[f64],
    y: f64,
    epsilon: f64,
    n_probe: usize,
    rng: &RngStream,
) -> Result<CheckResult> {
    if y != 0.0 && y != 1.0 {
        return Err(invalid(format!("label must be 0 or 1, got {y}")));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let d = x.len();
    let g = model.gradient(x)?;
    let fx = model.evaluate(x)?;
    let l = hessian_norm_bound(model, x, epsilon, n_probe, &rng.substream(7))?;
    let rhs = logistic_loss(fx, y) + epsilon * numerics::norm1(&g) + 0.5 * epsilon * epsilon * d as f64 * l;
    let mut probes: Vec<Vec<f64>> = vec![x.to_vec()];
    for sign in [1.0, -1.0] {
        probes.push((0..d).map(|i| x[i] + sign * epsilon * g[i].signum()).collect());
    }
    let prng = rng.substream(8);
    for k in 0..n_probe as u64 {
        probes.push(numerics::sample_uniform_box(&mut prng.substream(k), x, epsilon)?);
    }
    let losses = probes
        .par_iter()
        .map(|p| Ok(logistic_loss(model.evaluate(p)?, y)))
        .collect::<Result<Vec<f64>>>()?;
    let lhs = losses.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::inequality(
        "adversarial-bound",
        lhs,
        rhs,
        1e-8,
        format!("x={} y={y} eps={epsilon} L={l:.4}", fmt_vec(x)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub method: String,
    /// Mean Spearman correlation of raw attributions.
    pub corr: f64,
    /// Mean Spearman correlation of absolute attributions.
    pub corr_abs: f64,
    /// Inputs where a correlation was undefined and counted as 0.
    pub degenerate: usize,
}

/// Rank correlation between attributions of `model` and of a copy with the
/// last layer randomized, averaged over `inputs`.
pub fn run_sanity_check(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    explainers: &[Explainer],
    rng: &RngStream,
) -> Result<Vec<SanityRow>> {
    let last = model.layers().len() - 1;
    let randomized = model.randomize_layer(last, &rng.substream(0))?;
    sanity_against(&Model::Mlp(model.clone()), &Model::Mlp(randomized), inputs, explainers, rng)
}

/// Rank correlation of attributions between two given models.
pub fn sanity_against(
    original: &Model,
    randomized: &Model,
    inputs: &[Vec<f64>],
    explainers: &[Explainer],
    rng: &RngStream,
) -> Result<Vec<SanityRow>> {
    if inputs.is_empty() {
        return Err(invalid("sanity check needs at least one input"));
    }
    explainers
        .iter()
        .map(|e| {
            let rows = inputs
                .par_iter()
                .enumerate()
                .map(|(k, x)| {
                    let erng = rng.substream(1).substream(k as u64);
                    let a = e.explain(original, x, &erng)?.values;
                    let b = e.explain(randomized, x, &erng)?.values;
                    let raw = numerics::spearman_correlation(&a, &b)?;
                    let abs_a: Vec<f64> = a.iter().map(|v| v.abs()).collect();
                    let abs_b: Vec<f64> = b.iter().map(|v| v.abs()).collect();
                    let abs = numerics::spearman_correlation(&abs_a, &abs_b)?;
                    Ok((raw, abs))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = rows.len() as f64;
            Ok(SanityRow {
                method: e.tag(),
                corr: rows.iter().map(|r| r.0.value).sum::<f64>() / n,
                corr_abs: rows.iter().map(|r| r.1.value).sum::<f64>() / n,
                degenerate: rows.iter().filter(|r| r.0.degenerate || r.1.degenerate).count(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Completeness,
    Smoothing,
    Bounds,
    Rinfd,
    Adversarial,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "completeness" => Suite::Completeness,
            "smoothing" => Suite::Smoothing,
            "bounds" => Suite::Bounds,
            "rinfd" => Suite::Rinfd,
            "adversarial" => Suite::Adversarial,
            other => {
                return Err(invalid(format!(
                    "unknown suite {other:?} (expected all, completeness, smoothing, bounds, rinfd or adversarial)"
                )))
            }
        })
    }
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

type Job = Box<dyn Fn(&RngStream) -> Result<Vec<CheckResult>> + Send + Sync>;

fn tagged(id: &str, mut checks: Vec<CheckResult>) -> Vec<CheckResult> {
    for c in &mut checks {
        c.context = format!("model={id} {}", c.context);
    }
    checks
}

/// Checks run by `suite` over corpora generated from `seed`, in a fixed order.
///
/// Job `k` draws from the stream `(seed, k)`, so records do not depend on
/// scheduling.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    let mut jobs: Vec<Job> = Vec::new();
    let cfg = MeasureConfig { n_sens: 500, n_infd: 2000, ..MeasureConfig::default() };

    if suite.includes(Suite::Completeness) {
        for e in corpus::softplus_corpus(seed, 20, 10) {
            jobs.push(Box::new(move |_| {
                let x0 = vec![0.0; e.x.len()];
                Ok(tagged(&e.id, vec![check_completeness(&e.model, &e.x, &x0)?]))
            }));
        }
    }
    if suite.includes(Suite::Smoothing) {
        let kernels = [
            SmoothingKernel::Gaussian { sigma: 0.1 },
            SmoothingKernel::UniformBox { radius: 0.2 },
            SmoothingKernel::UniformBox { radius: 1.0 },
        ];
        for e in corpus::softplus_corpus(seed ^ 0x51, 20, 6) {
            let cfg = cfg.clone();
            jobs.push(Box::new(move |rng| {
                let mut out = Vec::new();
                for (k, kernel) in kernels.iter().enumerate() {
                    let sub = rng.substream(k as u64);
                    out.push(check_smoothing_sensitivity(&e.model, &Explainer::Gradient, kernel, &e.x, &cfg, 50, &sub)?);
                }
                Ok(tagged(&e.id, out))
            }));
        }
        for e in corpus::quadratic_corpus(seed ^ 0x52, 20, 4) {
            jobs.push(Box::new(move |rng| {
                let kernel = SmoothingKernel::Gaussian { sigma: 0.1 };
                let family = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 0.5 };
                let (check, c) = check_smoothing_infidelity(&e.model, &Explainer::Gradient, &kernel, &family, &e.x, 10_000, rng)?;
                let jensen = check_c2_jensen(&c, &check.context);
                Ok(tagged(&e.id, vec![check, jensen]))
            }));
        }
    }
    if suite.includes(Suite::Bounds) {
        for e in corpus::two_layer_corpus(seed ^ 0x53, 20, 6) {
            let cfg = cfg.clone();
            jobs.push(Box::new(move |rng| {
                let mlp = e.model.as_mlp().expect("two-layer corpus holds networks");
                Ok(tagged(&e.id, vec![check_softplus_bound(mlp, &cfg, rng, &e.x)?]))
            }));
        }
        for e in corpus::quadratic_corpus(seed ^ 0x54, 20, 6) {
            let cfg = cfg.clone();
            jobs.push(Box::new(move |rng| {
                let family = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
                let (a, b) = check_hessian_bounds(&e.model, &family, &e.x, &cfg, rng)?;
                Ok(tagged(&e.id, vec![a, b]))
            }));
        }
    }
    if suite.includes(Suite::Rinfd) {
        let mut entries = corpus::softplus_corpus(seed ^ 0x55, 19, 6);
        entries.push(CorpusEntry {
            id: "toy-boundary".into(),
            model: Model::Toy(crate::models::ToyFunction),
            x: vec![20.0, 11.95],
        });
        for e in entries {
            let cfg = MeasureConfig { n_infd: 500, ..cfg.clone() };
            jobs.push(Box::new(move |rng| {
                let family = if matches!(e.model, Model::Toy(_)) {
                    PerturbationFamily::BaselineDiff { x0: Baseline::Vector(vec![19.5, 11.95]) }
                } else {
                    PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 0.5 }
                };
                Ok(tagged(&e.id, vec![check_rinfd_lower_bound(&e.model, &Explainer::Gradient, &e.x, &family, &cfg, 50, rng)?]))
            }));
        }
    }
    if suite.includes(Suite::Adversarial) {
        let linear: Vec<CorpusEntry> = corpus::quadratic_corpus(seed ^ 0x56, 5, 6)
            .into_iter()
            .map(|e| {
                let Model::Quadratic(q) = &e.model else { unreachable!() };
                let model = Model::Quadratic(crate::models::QuadraticModel::linear(q.linear_term().to_vec(), q.offset()));
                CorpusEntry { id: e.id.replace("quadratic", "linear"), model, x: e.x }
            })
            .collect();
        for (k, e) in linear.into_iter().chain(corpus::quadratic_corpus(seed ^ 0x57, 20, 6)).enumerate() {
            jobs.push(Box::new(move |rng| {
                let y = (k % 2) as f64;
                Ok(tagged(&e.id, vec![check_adversarial_bound(&e.model, &e.x, y, 0.1, 200, rng)?]))
            }));
        }
    }

    let results = jobs
        .par_iter()
        .enumerate()
        .map(|(k, job)| job(&RngStream::new(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Directional check that smoothing lowers the mean of `sens` and of `infd`
/// across `entries`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub sens_base: f64,
    pub sens_smoothed: f64,
    pub infd_base: f64,
    pub infd_smoothed: f64,
}

/// Mean sensitivity and infidelity of `base` and `smoothed` over a corpus.
pub fn smoothing_trend(
    entries: &[CorpusEntry],
    base: &Explainer,
    smoothed: &Explainer,
    family: &PerturbationFamily,
    cfg: &MeasureConfig,
    seed: u64,
) -> Result<TrendSummary> {
    let rows = entries
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            let rng = RngStream::new(seed, k as u64);
            let set: SampleSet = measures::record_samples(&e.model, family, &e.x, cfg, &rng)?;
            let select = measures::MeasureSelection::default();
            let a = measures::measure(&e.model, base, &e.x, family, &set, cfg, &select, &rng)?;
            let b = measures::measure(&e.model, smoothed, &e.x, family, &set, cfg, &select, &rng)?;
            Ok((a.sens_max, b.sens_max, a.infidelity, b.infidelity))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(TrendSummary {
        sens_base: rows.iter().map(|r| r.0).sum::<f64>() / n,
        sens_smoothed: rows.iter().map(|r| r.1).sum::<f64>() / n,
        infd_base: rows.iter().map(|r| r.2).sum::<f64>() / n,
        infd_smoothed: rows.iter().map(|r| r.3).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Layer, QuadraticModel, ToyFunction};
    use crate::numerics::{derive_stream, SquareMatrix};

    fn linear(w: Vec<f64>) -> Model {
        Model::Quadratic(QuadraticModel::linear(w, 0.5))
    }

    #[test]
    fn completeness_examples() {
        let c = check_completeness(&linear(vec![1.0, -2.0, 3.0]), &[0.4, 1.0, -0.3], &[0.0; 3]).unwrap();
        assert!(c.passed && (c.lhs - c.rhs).abs() <= 1e-9, "{c} diff {}", c.lhs - c.rhs);
        let z = check_completeness(&linear(vec![1.0, 2.0]), &[0.4, 1.0], &[0.4, 1.0]).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    }

    #[test]
    fn smoothing_sensitivity_examples() {
        let rng = derive_stream(2, 0);
        let cfg = MeasureConfig::default();
        let k = SmoothingKernel::UniformBox { radius: 0.5 };
        let c = check_smoothing_sensitivity(&linear(vec![1.0, 2.0]), &Explainer::Gradient, &k, &[0.0, 0.0], &cfg, 20, &rng).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        let constant = Explainer::Constant { values: None };
        let c = check_smoothing_sensitivity(&Model::Toy(ToyFunction), &constant, &k, &[20.0, 11.9], &cfg, 20, &rng).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        // smoothing averages the gradient flip away
        let wide = SmoothingKernel::UniformBox { radius: 2.0 };
        let c = check_smoothing_sensitivity(&Model::Toy(ToyFunction), &Explainer::Gradient, &wide, &[20.0, 11.9], &cfg, 200, &rng).unwrap();
        assert!(c.passed && c.lhs < 0.8 * c.rhs, "{c}");
    }

    #[test]
    fn smoothing_infidelity_degenerate_kernel() {
        let h = SquareMatrix::diagonal(&[1.0, 2.0]);
        let model = Model::Quadratic(QuadraticModel::new(h, vec![0.0, 1.0], 0.0).unwrap());
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 0.5 };
        let k = SmoothingKernel::UniformBox { radius: 0.0 };
        let (c, consts) = check_smoothing_infidelity(&model, &Explainer::Gradient, &k, &fam, &[1.0, 1.0], 400, &derive_stream(1, 0)).unwrap();
        assert!(c.passed && c.applicable);
        assert_eq!(consts.c1, 0.0);
        assert!((c.lhs - c.rhs).abs() <= 1e-12 * c.rhs.max(1.0), "{c}");
    }

    #[test]
    fn softplus_bound_single_layer() {
        let mlp = MlpModel::new(2, vec![Layer::unbiased(vec![vec![2.0, 0.0]], Activation::Softplus)], 0).unwrap();
        let cfg = MeasureConfig { n_sens: 500, ..Default::default() };
        let c = check_softplus_bound(&mlp, &cfg, &derive_stream(0, 3), &[0.1, -0.2]).unwrap();
        assert!(c.passed && (c.rhs - 0.1).abs() < 1e-15, "{c}");
        let zero = MlpModel::new(2, vec![Layer::unbiased(vec![vec![0.0, 0.0]], Activation::Softplus)], 0).unwrap();
        let c = check_softplus_bound(&zero, &cfg, &derive_stream(0, 3), &[0.1, -0.2]).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
    }

    #[test]
    fn hessian_bound_examples() {
        let cfg = MeasureConfig::default();
        let rng = derive_stream(5, 5);
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        let (a, b) = check_hessian_bounds(&linear(vec![1.0, 2.0]), &fam, &[0.3, 0.2], &cfg, &rng).unwrap();
        assert!(a.passed && b.passed && a.rhs == 0.0 && b.rhs == 0.0, "{a} {b}");
        let id = Model::Quadratic(QuadraticModel::new(SquareMatrix::identity(2), vec![0.0, 0.0], 0.0).unwrap());
        let (a, _) = check_hessian_bounds(&id, &fam, &[0.3, 0.2], &cfg, &rng).unwrap();
        assert!(a.passed, "{a}");
        let h = Model::Quadratic(QuadraticModel::new(SquareMatrix::diagonal(&[5.0, 1.0]), vec![0.0, 0.0], 0.0).unwrap());
        let (_, b) = check_hessian_bounds(&h, &fam, &[0.3, 0.2], &cfg, &rng).unwrap();
        assert!(b.passed && b.lhs <= 0.5 && (b.rhs - 0.5).abs() < 1e-15, "{b}");
    }

    #[test]
    fn rinfd_examples() {
        let cfg = MeasureConfig::default();
        let rng = derive_stream(9, 0);
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        let c = check_rinfd_lower_bound(&linear(vec![1.0, -1.0]), &Explainer::Gradient, &[0.2, 0.1], &fam, &cfg, 20, &rng).unwrap();
        assert!(c.passed && c.lhs == 0.0, "{c}");
        let h = Model::Quadratic(QuadraticModel::new(SquareMatrix::diagonal(&[5.0, 1.0]), vec![0.0, 0.0], 0.0).unwrap());
        let constant = Explainer::Constant { values: None };
        let c = check_rinfd_lower_bound(&h, &constant, &[0.2, 0.1], &fam, &cfg, 20, &rng).unwrap();
        assert!(c.passed && c.lhs == 0.0);
        let toy = Model::Toy(ToyFunction);
        let fam = PerturbationFamily::BaselineDiff { x0: Baseline::Vector(vec![19.5, 11.95]) };
        let c = check_rinfd_lower_bound(&toy, &Explainer::Gradient, &[20.0, 11.95], &fam, &cfg, 50, &rng).unwrap();
        assert!(c.passed && c.rhs > 0.0, "{c}");
    }

    #[test]
    fn adversarial_examples() {
        let rng = derive_stream(1, 1);
        let lin = linear(vec![1.0, -2.0]);
        let x = [0.3, 0.1];
        let c = check_adversarial_bound(&lin, &x, 1.0, 0.1, 50, &rng).unwrap();
        // closed form: the worst case moves f by ε‖w‖₁ against the label
        let fx = lin.evaluate(&x).unwrap();
        let exact = logistic_loss(fx - 0.3, 1.0).max(logistic_loss(fx + 0.3, 1.0));
        assert!(c.passed);
        assert!((c.lhs - exact).abs() < 1e-15, "{c}");
        let c0 = check_adversarial_bound(&lin, &x, 0.0, 0.0, 10, &rng).unwrap();
        assert_eq!(c0.lhs, logistic_loss(fx, 0.0));
        assert_eq!(c0.rhs, c0.lhs);
    }

    #[test]
    fn sanity_examples() {
        let rng = derive_stream(3, 3);
        let mlp = corpus::classifier_mlp(&mut derive_stream(1, 2), 6, 8, 1);
        let inputs: Vec<Vec<f64>> = (0..5).map(|k| corpus::random_input(&mut derive_stream(4, k), 6)).collect();
        let rows = run_sanity_check(&mlp, &inputs, &[Explainer::Constant { values: None }, Explainer::Gradient], &rng).unwrap();
        assert_eq!(rows[0].corr, 1.0);
        for r in &rows {
            assert!((-1.0..=1.0).contains(&r.corr) && (-1.0..=1.0).contains(&r.corr_abs));
        }
        // negating the read-out flips every gradient
        let mut layers = mlp.layers().to_vec();
        let last = layers.len() - 1;
        layers[last].weights.iter_mut().flatten().for_each(|w| *w = -*w);
        let flipped = MlpModel::new(6, layers, 0).unwrap();
        let rows = sanity_against(&Model::Mlp(mlp), &Model::Mlp(flipped), &inputs, &[Explainer::Gradient], &rng).unwrap();
        assert!((rows[0].corr + 1.0).abs() < 1e-12 && (rows[0].corr_abs - 1.0).abs() < 1e-12, "{rows:?}");
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!("nope".parse::<Suite>().is_err());
        assert_eq!("rinfd".parse::<Suite>().unwrap(), Suite::Rinfd);
    }
}
