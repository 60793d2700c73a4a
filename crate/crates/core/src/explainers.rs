//! Attribution methods.
//!
//! Gradient-family methods produce *local* attributions (per-unit
//! sensitivities); occlusion, Shapley values and the masked optimal
//! explanation produce *global* ones (estimated function-value changes).
//! [`to_global`] converts between the two by multiplying with `x − x0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::models::Predictor;
use crate::numerics::{self, RngStream, SquareMatrix};
use crate::perturbations::{mean_outer, mean_weighted, Baseline, PerturbationFamily, SampleSet};

pub const DEFAULT_IG_STEPS: usize = 128;
pub const DEFAULT_OPTIMAL_SAMPLES: usize = 20_000;
pub const DEFAULT_SMOOTH_SAMPLES: usize = 200;
pub const DEFAULT_SMOOTH_RADIUS: f64 = 0.2;
/// Largest dimension accepted by the exact Shapley enumeration.
pub const SHAPLEY_MAX_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Global,
}

impl std::fmt::Display for Locality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Locality::Local => "local",
            Locality::Global => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub locality: Locality,
    pub method: String,
    pub baseline: Option<Vec<f64>>,
}

impl Attribution {
    fn new(values: Vec<f64>, locality: Locality, method: impl Into<String>) -> Result<Self> {
        if !numerics::all_finite(&values) {
            return Err(Error::NonFinite("attribution"));
        }
        Ok(Self { values, locality, method: method.into(), baseline: None })
    }

    fn with_baseline(mut self, baseline: Vec<f64>) -> Self {
        self.baseline = Some(baseline);
        self
    }
}

/// Local attribution `⊙ (x − x0)`.
pub fn to_global(attr: &Attribution, x: &[f64], x0: &[f64]) -> Result<Attribution> {
    if attr.locality != Locality::Local {
        return Err(Error::Locality(format!("{} is already global", attr.method)));
    }
    check_dim(attr.values.len(), x.len())?;
    check_dim(x.len(), x0.len())?;
    let diff = numerics::sub(x, x0);
    Ok(Attribution {
        values: numerics::hadamard(&attr.values, &diff),
        locality: Locality::Global,
        method: attr.method.clone(),
        baseline: Some(x0.to_vec()),
    })
}

/// Global attribution `⊘ (x − x0)`; coordinates with `x_i = x0_i` map to 0.
pub fn to_local(attr: &Attribution, x: &[f64], x0: &[f64]) -> Result<Attribution> {
    if attr.locality != Locality::Global {
        return Err(Error::Locality(format!("{} is already local", attr.method)));
    }
    check_dim(attr.values.len(), x.len())?;
    check_dim(x.len(), x0.len())?;
    let values = (0..x.len())
        .map(|i| {
            let diff = x[i] - x0[i];
            if diff == 0.0 {
                0.0
            } else {
                attr.values[i] / diff
            }
        })
        .collect();
    Ok(Attribution { values, locality: Locality::Local, method: attr.method.clone(), baseline: Some(x0.to_vec()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingKernel {
    Gaussian { sigma: f64 },
    UniformBox { radius: f64 },
}

impl SmoothingKernel {
    pub fn validate(&self) -> Result<()> {
        let p = match self {
            SmoothingKernel::Gaussian { sigma } => *sigma,
            SmoothingKernel::UniformBox { radius } => *radius,
        };
        if !(p >= 0.0) || !p.is_finite() {
            return Err(invalid(format!("kernel parameter must be finite and >= 0, got {p}")));
        }
        Ok(())
    }

    /// Point `z ~ k(x, ·)`.
    pub fn sample(&self, rng: &mut RngStream, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SmoothingKernel::Gaussian { sigma } => numerics::sample_gaussian(rng, x, *sigma),
            SmoothingKernel::UniformBox { radius } => numerics::sample_uniform_box(rng, x, *radius),
        }
    }

    /// Offset `z − x` for a kernel centred at the origin.
    pub fn sample_offset(&self, rng: &mut RngStream, d: usize) -> Result<Vec<f64>> {
        self.sample(rng, &vec![0.0; d])
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            SmoothingKernel::Gaussian { sigma } => *sigma == 0.0,
            SmoothingKernel::UniformBox { radius } => *radius == 0.0,
        }
    }
}

/// An attribution method. Every variant is a deterministic function of
/// `(model, x, rng)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explainer {
    Gradient,
    IntegratedGradients { baseline: Baseline, steps: usize },
    Occlusion1 { baseline: Baseline },
    ShapleyExact { baseline: Baseline },
    /// Infidelity-optimal local explanation; `lambda: None` uses `1e-6 · trace(A)/d`.
    Optimal { family: PerturbationFamily, n: usize, lambda: Option<f64> },
    /// Infidelity-optimal global explanation from the binary-mask form.
    OptimalMasked { family: PerturbationFamily, n: usize, lambda: Option<f64> },
    Smoothed { base: Box<Explainer>, kernel: SmoothingKernel, n: usize },
    /// Ignores the model. `None` yields `(1, 2, …, d)`.
    Constant { values: Option<Vec<f64>> },
    /// `base ⊙ (x − baseline)`.
    Global { base: Box<Explainer>, baseline: Baseline },
}

impl Explainer {
    pub fn integrated_gradients() -> Self {
        Explainer::IntegratedGradients { baseline: Baseline::Zero, steps: DEFAULT_IG_STEPS }
    }

    pub fn occlusion() -> Self {
        Explainer::Occlusion1 { baseline: Baseline::Zero }
    }

    pub fn optimal(family: PerturbationFamily) -> Self {
        Explainer::Optimal { family, n: DEFAULT_OPTIMAL_SAMPLES, lambda: None }
    }

    pub fn optimal_masked(family: PerturbationFamily) -> Self {
        Explainer::OptimalMasked { family, n: DEFAULT_OPTIMAL_SAMPLES, lambda: None }
    }

    pub fn smooth(self, kernel: SmoothingKernel, n: usize) -> Self {
        Explainer::Smoothed { base: Box::new(self), kernel, n }
    }

    /// SmoothGrad-style default: uniform box of radius 0.2, 200 draws.
    pub fn smooth_default(self) -> Self {
        self.smooth(SmoothingKernel::UniformBox { radius: DEFAULT_SMOOTH_RADIUS }, DEFAULT_SMOOTH_SAMPLES)
    }

    pub fn globalized(self, baseline: Baseline) -> Self {
        Explainer::Global { base: Box::new(self), baseline }
    }

    pub fn locality(&self) -> Locality {
        match self {
            Explainer::Gradient
            | Explainer::IntegratedGradients { .. }
            | Explainer::Optimal { .. }
            | Explainer::Constant { .. } => Locality::Local,
            Explainer::Occlusion1 { .. } | Explainer::ShapleyExact { .. } | Explainer::OptimalMasked { .. } => {
                Locality::Global
            }
            Explainer::Global { .. } => Locality::Global,
            Explainer::Smoothed { base, .. } => base.locality(),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Explainer::Gradient => "grad".into(),
            Explainer::IntegratedGradients { .. } => "ig".into(),
            Explainer::Occlusion1 { .. } => "occlusion".into(),
            Explainer::ShapleyExact { .. } => "shapley-exact".into(),
            Explainer::Optimal { family, .. } => format!("optimal[{}]", family.name()),
            Explainer::OptimalMasked { family, .. } => format!("optimal-masked[{}]", family.name()),
            Explainer::Smoothed { base, .. } => format!("{}-sg", base.tag()),
            Explainer::Constant { .. } => "constant".into(),
            Explainer::Global { base, .. } => format!("{}*x", base.tag()),
        }
    }

    /// Whether the attribution depends on `rng`.
    pub fn is_stochastic(&self) -> bool {
        match self {
            Explainer::Optimal { family, .. } | Explainer::OptimalMasked { family, .. } => !family.is_deterministic(),
            Explainer::Smoothed { kernel, .. } => !kernel.is_degenerate(),
            Explainer::Global { base, .. } => base.is_stochastic(),
            _ => false,
        }
    }

    pub fn explain(&self, model: &dyn Predictor, x: &[f64], rng: &RngStream) -> Result<Attribution> {
        check_dim(model.input_dim(), x.len())?;
        let d = x.len();
        match self {
            Explainer::Gradient => Attribution::new(model.gradient(x)?, Locality::Local, self.tag()),
            Explainer::IntegratedGradients { baseline, steps } => {
                let x0 = baseline.resolve(d)?;
                let values = integrated_gradients(model, x, &x0, *steps)?;
                Ok(Attribution::new(values, Locality::Local, self.tag())?.with_baseline(x0))
            }
            Explainer::Occlusion1 { baseline } => {
                let x0 = baseline.resolve(d)?;
                let values = occlusion1(model, x, &x0)?;
                Ok(Attribution::new(values, Locality::Global, self.tag())?.with_baseline(x0))
            }
            Explainer::ShapleyExact { baseline } => {
                let x0 = baseline.resolve(d)?;
                let values = shapley_exact(model, x, &x0)?;
                Ok(Attribution::new(values, Locality::Global, self.tag())?.with_baseline(x0))
            }
            Explainer::Optimal { family, n, lambda } => {
                let set = SampleSet::record(model, family, x, *n, rng)?;
                let values = optimal_from_samples(model, family, &set, *lambda, false)?;
                Attribution::new(values, Locality::Local, self.tag())
            }
            Explainer::OptimalMasked { family, n, lambda } => {
                if !family.has_masks() {
                    return Err(Error::Locality(format!("{} draws carry no binary masks", family.name())));
                }
                let set = SampleSet::record(model, family, x, *n, rng)?;
                let values = optimal_from_samples(model, family, &set, *lambda, true)?;
                Ok(Attribution::new(values, Locality::Global, self.tag())?.with_baseline(vec![0.0; d]))
            }
            Explainer::Smoothed { base, kernel, n } => {
                kernel.validate()?;
                if *n == 0 {
                    return Err(invalid("smoothing needs n >= 1"));
                }
                let parts = (0..*n as u64)
                    .into_par_iter()
                    .map(|k| {
                        let mut sub = rng.substream(k);
                        let z = kernel.sample(&mut sub, x)?;
                        base.explain(model, &z, &sub.substream(1))
                    })
                    .collect::<Result<Vec<_>>>()?;
                // running mean: exact when every draw yields the same attribution
                let mut values = vec![0.0; d];
                for (k, a) in parts.iter().enumerate() {
                    for i in 0..d {
                        values[i] += (a.values[i] - values[i]) / (k + 1) as f64;
                    }
                }
                let mut out = Attribution::new(values, base.locality(), self.tag())?;
                out.baseline = parts[0].baseline.clone();
                Ok(out)
            }
            Explainer::Constant { values } => {
                let values = match values {
                    Some(v) => {
                        check_dim(d, v.len())?;
                        v.clone()
                    }
                    None => (1..=d).map(|i| i as f64).collect(),
                };
                Attribution::new(values, Locality::Local, self.tag())
            }
            Explainer::Global { base, baseline } => {
                let local = base.explain(model, x, rng)?;
                let x0 = baseline.resolve(d)?;
                let mut g = to_global(&local, x, &x0)?;
                g.method = self.tag();
                Ok(g)
            }
        }
    }
}

/// Midpoint-rule path integral of the gradient from `x0` to `x`.
pub fn integrated_gradients(model: &dyn Predictor, x: &[f64], x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(invalid("integrated gradients needs steps >= 1"));
    }
    check_dim(x.len(), x0.len())?;
    let d = x.len();
    let dir = numerics::sub(x, x0);
    let grads = (0..steps)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 + 0.5) / steps as f64;
            let p: Vec<f64> = (0..d).map(|i| x0[i] + t * dir[i]).collect();
            model.gradient(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; d];
    for g in &grads {
        for i in 0..d {
            acc[i] += g[i];
        }
    }
    Ok(acc.into_iter().map(|v| v / steps as f64).collect())
}

/// `f(x) − f(x with coordinate i set to x0_i)`.
pub fn occlusion1(model: &dyn Predictor, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), x0.len())?;
    let fx = model.evaluate(x)?;
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] = x0[i];
            Ok(fx - model.evaluate(&p)?)
        })
        .collect()
}

/// Exact Shapley values of `h(S) = f(x on S, x0 elsewhere)` by enumerating all subsets.
pub fn shapley_exact(model: &dyn Predictor, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let d = x.len();
    check_dim(d, x0.len())?;
    if d > SHAPLEY_MAX_DIM {
        return Err(invalid(format!("exact Shapley enumeration is limited to d <= {SHAPLEY_MAX_DIM}, got {d}")));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let h = (0..1usize << d)
        .into_par_iter()
        .map(|s| {
            let p: Vec<f64> = (0..d).map(|i| if s >> i & 1 == 1 { x[i] } else { x0[i] }).collect();
            model.evaluate(&p)
        })
        .collect::<Result<Vec<f64>>>()?;
    // weight(s) = s! (d − s − 1)! / d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / d as f64;
        // 1/(d · C(d−1, s))
        for k in 0..s {
            v *= (k + 1) as f64 / (d - 1 - k) as f64;
        }
        *w = v;
    }
    Ok((0..d)
        .into_par_iter()
        .map(|j| {
            let bit = 1usize << j;
            let mut phi = 0.0;
            for s in 0..1usize << d {
                if s & bit == 0 {
                    phi += weight[s.count_ones() as usize] * (h[s | bit] - h[s]);
                }
            }
            phi
        })
        .collect())
}

/// Normal equations `(A, b)` of the infidelity least-squares fit on `set`.
///
/// `masked` regresses `Δf` on the masks `z` instead of the perturbations `I`.
pub fn normal_equations(set: &SampleSet, masked: bool) -> Result<(SquareMatrix, Vec<f64>)> {
    let d = set.dim();
    let regressors = if masked { set.masks()? } else { set.perturbations() };
    Ok((mean_outer(&regressors, d), mean_weighted(&regressors, &set.delta_f, d)))
}

/// Least-squares attribution on recorded samples.
///
/// `lambda: None` applies the ridge `1e-6 · trace(A)/d`. Families with a
/// pinned sample (the Shapley kernel) are fitted subject to reproducing it
/// exactly.
pub fn optimal_from_samples(
    model: &dyn Predictor,
    family: &PerturbationFamily,
    set: &SampleSet,
    lambda: Option<f64>,
    masked: bool,
) -> Result<Vec<f64>> {
    let (a, b) = normal_equations(set, masked)?;
    let lambda = lambda.unwrap_or_else(|| {
        let tr = a.trace() / a.dim().max(1) as f64;
        1e-6 * tr
    });
    let solution = match family.pinned_sample(&set.x) {
        Some(pin) => {
            let target = set.response(model, &pin)?;
            let c = if masked { pin.mask.expect("pinned samples of mask families carry masks") } else { pin.i_vec };
            numerics::solve_constrained(&a, &b, &c, target, lambda)?
        }
        None => numerics::solve_regularized(&a, &b, lambda)?,
    };
    Ok(solution.x)
}
