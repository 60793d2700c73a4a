//! The `name:key=value,...` mini-grammar for perturbations, kernels and methods.
//!
//! Vector-valued keys separate entries with `;`, and `multi-baseline`
//! separates whole baselines with `|`:
//!
//! ```text
//! baseline:x0=zero              noisy-baseline:x0=0.5,sigma=0.2
//! subset-baseline:subset=0;2    multi-baseline:baselines=0;0|1;1,weights=0.3;0.7
//! coord-eps:eps=0.001           coord-x        shapley
//! square:h=28,w=28,smin=1,smax=10
//!
//! gaussian:sigma=0.1            uniform:radius=0.2
//!
//! grad  ig:steps=512  occlusion  shapley-exact  optimal:n=5000  constant
//! ```
//!
//! A method may carry the suffix `-sg` (smoothed with the run's kernel) and
//! then `*x` (multiplied by `x − x0`), e.g. `ig-sg*x`.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use xinfid::explainers::{DEFAULT_IG_STEPS, DEFAULT_OPTIMAL_SAMPLES};
use xinfid::{Baseline, Explainer, PerturbationFamily, SmoothingKernel};

#[derive(Debug, Clone, PartialEq)]
pub struct Spec {
    pub name: String,
    args: BTreeMap<String, String>,
}

impl Spec {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, rest) = match text.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r)),
            None => (text, None),
        };
        if name.is_empty() {
            bail!("empty name in spec {text:?}");
        }
        let mut args = BTreeMap::new();
        for pair in rest.into_iter().flat_map(|r| r.split(',')).filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("expected key=value in {text:?}, found {pair:?}"))?;
            if args.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                bail!("key {:?} given twice in {text:?}", k.trim());
            }
        }
        Ok(Self { name: name.to_string(), args })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.args.remove(key)
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("{}: cannot parse {key}={v:?} as a number", self.name)),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.number(key)?.ok_or_else(|| anyhow!("{}: missing required key {key}", self.name))
    }

    fn baseline(&mut self) -> Result<Baseline> {
        self.take("x0").map(|v| parse_baseline(&v)).transpose().map(|b| b.unwrap_or(Baseline::Zero))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.args.keys().next() {
            bail!("{}: unknown key {k:?}", self.name);
        }
        Ok(())
    }
}

/// `zero`, a single number (constant baseline) or `a;b;c`.
pub fn parse_baseline(text: &str) -> Result<Baseline> {
    if text == "zero" {
        return Ok(Baseline::Zero);
    }
    let v = parse_list(text, ';')?;
    Ok(if v.len() == 1 { Baseline::Constant(v[0]) } else { Baseline::Vector(v) })
}

pub fn parse_list(text: &str, sep: char) -> Result<Vec<f64>> {
    text.split(sep)
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("cannot parse {s:?} as a number")))
        .collect()
}

pub fn parse_family(text: &str) -> Result<PerturbationFamily> {
    let mut s = Spec::parse(text)?;
    let family = match s.name.as_str() {
        "baseline" => PerturbationFamily::BaselineDiff { x0: s.baseline()? },
        "subset-baseline" => {
            let subset = s.take("subset").ok_or_else(|| anyhow!("subset-baseline: missing required key subset"))?;
            let subset = subset
                .split(';')
                .map(|v| v.trim().parse::<usize>().with_context(|| format!("subset index {v:?}")))
                .collect::<Result<_>>()?;
            PerturbationFamily::SubsetBaseline { subset, x0: s.baseline()? }
        }
        "noisy-baseline" => PerturbationFamily::NoisyBaseline { x0: s.baseline()?, sigma: s.required("sigma")? },
        "multi-baseline" => {
            let raw = s.take("baselines").ok_or_else(|| anyhow!("multi-baseline: missing required key baselines"))?;
            let baselines = raw.split('|').map(|b| parse_list(b, ';')).collect::<Result<Vec<_>>>()?;
            match s.take("weights") {
                Some(w) => PerturbationFamily::MultiBaseline { baselines, weights: parse_list(&w, ';')? },
                None => PerturbationFamily::multi_uniform(baselines),
            }
        }
        "coord-eps" => PerturbationFamily::CoordinateEps { epsilon: s.required("eps")? },
        "coord-x" => PerturbationFamily::CoordinateTimesX,
        "shapley" => PerturbationFamily::ShapleyKernel,
        "square" => {
            let (height, width): (usize, usize) = (s.required("h")?, s.required("w")?);
            let PerturbationFamily::SquareRemoval { smin, smax, .. } = PerturbationFamily::square_default(height, width)
            else {
                unreachable!()
            };
            PerturbationFamily::SquareRemoval {
                height,
                width,
                smin: s.number("smin")?.unwrap_or(smin),
                smax: s.number("smax")?.unwrap_or(smax),
            }
        }
        other => bail!(
            "unknown perturbation {other:?} (expected baseline, subset-baseline, noisy-baseline, \
             multi-baseline, coord-eps, coord-x, shapley or square)"
        ),
    };
    s.finish()?;
    Ok(family)
}

pub fn parse_kernel(text: &str) -> Result<SmoothingKernel> {
    let mut s = Spec::parse(text)?;
    let kernel = match s.name.as_str() {
        "gaussian" => SmoothingKernel::Gaussian { sigma: s.required("sigma")? },
        "uniform" | "box" => SmoothingKernel::UniformBox { radius: s.required("radius")? },
        other => bail!("unknown kernel {other:?} (expected gaussian or uniform)"),
    };
    s.finish()?;
    kernel.validate()?;
    Ok(kernel)
}

/// Run-wide settings a method string is resolved against.
#[derive(Debug, Clone)]
pub struct MethodContext {
    pub family: PerturbationFamily,
    pub kernel: SmoothingKernel,
    pub smooth_samples: usize,
    /// Baseline used by `*x` and by methods that take `x0` when none is given.
    pub baseline: Baseline,
}

pub fn parse_method(text: &str, ctx: &MethodContext) -> Result<Explainer> {
    let mut s = Spec::parse(text)?;
    let mut name = s.name.clone();
    let global = name.ends_with("*x");
    if global {
        name.truncate(name.len() - 2);
    }
    let smoothed = name.ends_with("-sg");
    if smoothed {
        name.truncate(name.len() - 3);
    }
    let baseline = |s: &mut Spec| -> Result<Baseline> {
        Ok(if s.args.contains_key("x0") { s.baseline()? } else { ctx.baseline.clone() })
    };
    let mut explainer = match name.as_str() {
        "grad" => Explainer::Gradient,
        "ig" => Explainer::IntegratedGradients {
            baseline: baseline(&mut s)?,
            steps: s.number("steps")?.unwrap_or(DEFAULT_IG_STEPS),
        },
        "occlusion" => Explainer::Occlusion1 { baseline: baseline(&mut s)? },
        "shapley-exact" => Explainer::ShapleyExact { baseline: baseline(&mut s)? },
        "optimal" => {
            let n = s.number("n")?.unwrap_or(DEFAULT_OPTIMAL_SAMPLES);
            let lambda = s.number("lambda")?;
            let family = ctx.family.clone();
            if family.has_masks() {
                Explainer::OptimalMasked { family, n, lambda }
            } else {
                Explainer::Optimal { family, n, lambda }
            }
        }
        "constant" => Explainer::Constant { values: s.take("values").map(|v| parse_list(&v, ';')).transpose()? },
        other => bail!(
            "unknown method {other:?} (expected grad, ig, occlusion, shapley-exact, optimal or constant, \
             optionally with -sg and/or *x)"
        ),
    };
    s.finish()?;
    if smoothed {
        explainer = explainer.smooth(ctx.kernel, ctx.smooth_samples);
    }
    if global {
        explainer = explainer.globalized(ctx.baseline.clone());
    }
    Ok(explainer)
}
