//! Monte Carlo estimators of infidelity, sensitivity and the smoothing constants.
//!
//! Every estimator addresses its randomness through substreams of the
//! [`RngStream`] it is given: substream 0 for perturbation draws, 1 for the
//! explainer, 2 for ball offsets and 3 for kernel draws. Two estimators handed
//! the same stream therefore see the same samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::explainers::{Attribution, Explainer, Locality, SmoothingKernel};
use crate::models::{fd_step, Predictor};
use crate::numerics::{self, RngStream};
use crate::perturbations::{PerturbationFamily, SampleSet};

const PERTURBATION_STREAM: u64 = 0;
const EXPLAINER_STREAM: u64 = 1;
const BALL_STREAM: u64 = 2;
const KERNEL_STREAM: u64 = 3;

/// Norm defining the sensitivity ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallNorm {
    Inf,
    L2,
}

impl BallNorm {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            BallNorm::Inf => numerics::norm_inf(v),
            BallNorm::L2 => numerics::norm2(v),
        }
    }

    /// Offset drawn uniformly from the ball of `radius` around the origin.
    pub fn sample(self, rng: &mut RngStream, d: usize, radius: f64) -> Result<Vec<f64>> {
        let origin = vec![0.0; d];
        match self {
            BallNorm::Inf => numerics::sample_uniform_box(rng, &origin, radius),
            BallNorm::L2 => numerics::sample_l2_ball(rng, &origin, radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub n_infd: usize,
    pub n_sens: usize,
    pub radius: f64,
    pub ball_norm: BallNorm,
    pub apply_optimal_scaling: bool,
    pub apply_unit_normalization: bool,
    pub seed: u64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            n_infd: 1000,
            n_sens: 50,
            radius: 0.1,
            ball_norm: BallNorm::Inf,
            apply_optimal_scaling: true,
            apply_unit_normalization: true,
            seed: 0,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_infd == 0 || self.n_sens == 0 {
            return Err(invalid("sample counts must be >= 1"));
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(invalid(format!("radius must be finite and >= 0, got {}", self.radius)));
        }
        Ok(())
    }

    /// Same configuration with scaling and normalization disabled.
    pub fn raw(&self) -> Self {
        Self { apply_optimal_scaling: false, apply_unit_normalization: false, ..self.clone() }
    }
}

/// `α = Σ ρ_k Δf_k / Σ ρ_k²`, or 1 when `Σ ρ_k² < 1e-12`.
pub fn optimal_scale(rho: &[f64], delta_f: &[f64]) -> Result<f64> {
    check_dim(rho.len(), delta_f.len())?;
    let rr: f64 = rho.iter().map(|r| r * r).sum();
    if rr < 1e-12 {
        return Ok(1.0);
    }
    let rd: f64 = rho.iter().zip(delta_f).map(|(r, d)| r * d).sum();
    Ok(rd / rr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfidelityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub alpha: f64,
    pub n: usize,
}

/// `ρ_k = regᵀΦ` with `reg = I` for local attributions and the mask `z` for global ones.
pub fn projections(attr: &Attribution, set: &SampleSet) -> Result<Vec<f64>> {
    check_dim(set.dim(), attr.values.len())?;
    match attr.locality {
        Locality::Local => Ok(set.samples.iter().map(|s| numerics::dot(&s.i_vec, &attr.values)).collect()),
        Locality::Global => {
            let masks = set.masks().map_err(|_| {
                Error::Locality(format!(
                    "global attribution {} needs a mask-structured perturbation family",
                    attr.method
                ))
            })?;
            Ok(masks.iter().map(|z| numerics::dot(z, &attr.values)).collect())
        }
    }
}

/// Mean squared residual `(α ρ_k − Δf_k)²` on recorded samples.
pub fn infidelity_on_samples(attr: &Attribution, set: &SampleSet, scaling: bool) -> Result<InfidelityEstimate> {
    let rho = projections(attr, set)?;
    let alpha = if scaling { optimal_scale(&rho, &set.delta_f)? } else { 1.0 };
    let sq: Vec<f64> = rho.iter().zip(&set.delta_f).map(|(r, d)| (alpha * r - d).powi(2)).collect();
    let (value, std_error) = numerics::mean_and_stderr(&sq);
    Ok(InfidelityEstimate { value, std_error, alpha, n: sq.len() })
}

pub fn record_samples(
    model: &dyn Predictor,
    family: &PerturbationFamily,
    x: &[f64],
    cfg: &MeasureConfig,
    rng: &RngStream,
) -> Result<SampleSet> {
    SampleSet::record(model, family, x, cfg.n_infd, &rng.substream(PERTURBATION_STREAM))
}

pub fn infidelity(
    model: &dyn Predictor,
    attr: &Attribution,
    x: &[f64],
    family: &PerturbationFamily,
    cfg: &MeasureConfig,
    rng: &RngStream,
) -> Result<InfidelityEstimate> {
    cfg.validate()?;
    let set = record_samples(model, family, x, cfg, rng)?;
    infidelity_on_samples(attr, &set, cfg.apply_optimal_scaling)
}

/// Exact least-squares attribution on `set` (no ridge unless `A` is singular).
///
/// This is what the optimal explainers compute when scored on shared samples.
pub fn least_squares_on_samples(set: &SampleSet, locality: Locality) -> Result<Vec<f64>> {
    let (a, b) = crate::explainers::normal_equations(set, locality == Locality::Global)?;
    Ok(numerics::solve_regularized(&a, &b, 0.0)?.x)
}

/// Attribution for `explainer`, with optimal explainers fitted on `set` itself.
pub fn attribution_on_shared(
    explainer: &Explainer,
    model: &dyn Predictor,
    set: &SampleSet,
    rng: &RngStream,
) -> Result<Attribution> {
    match explainer {
        Explainer::Optimal { .. } | Explainer::OptimalMasked { .. } => {
            let locality = explainer.locality();
            let values = least_squares_on_samples(set, locality)?;
            Ok(Attribution { values, locality, method: explainer.tag(), baseline: None })
        }
        _ => explainer.explain(model, &set.x, &rng.substream(EXPLAINER_STREAM)),
    }
}

/// L2-normalized copy; zero vectors are returned unchanged with `true`.
pub fn unit_normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let n = numerics::norm2(v);
    if n == 0.0 {
        (v.to_vec(), true)
    } else {
        (v.iter().map(|a| a / n).collect(), false)
    }
}

/// Offsets `u_k`, `k = 0..n`, uniform in the ball of `radius`.
pub fn ball_offsets(cfg: &MeasureConfig, d: usize, n: usize, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    let stream = rng.substream(BALL_STREAM);
    (0..n as u64).map(|k| cfg.ball_norm.sample(&mut stream.substream(k), d, cfg.radius)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    /// Sampled `max ‖Φ(x+δ) − Φ(x)‖₂`.
    pub max: f64,
    /// Sampled `max ‖Φ(x+δ) − Φ(x)‖₂ / ‖δ‖` over nonzero offsets (ball norm).
    pub lips: f64,
    /// Whether any compared attribution was zero and left unnormalized.
    pub zero_attribution: bool,
    pub n: usize,
}

/// Max- and Lipschitz-sensitivity over explicit candidate offsets.
///
/// The explainer sees the same stream at every point, so stochastic
/// explainers are compared under common random numbers.
pub fn sensitivity_on_offsets(
    explainer: &Explainer,
    model: &dyn Predictor,
    x: &[f64],
    offsets: &[Vec<f64>],
    cfg: &MeasureConfig,
    rng: &RngStream,
) -> Result<SensitivityEstimate> {
    check_dim(model.input_dim(), x.len())?;
    let erng = rng.substream(EXPLAINER_STREAM);
    let prep = |v: Vec<f64>| {
        if cfg.apply_unit_normalization {
            unit_normalize(&v)
        } else {
            (v, false)
        }
    };
    let (center, mut zero) = prep(explainer.explain(model, x, &erng)?.values);
    let rows = offsets
        .par_iter()
        .map(|u| {
            check_dim(x.len(), u.len())?;
            let y = numerics::add(x, u);
            let (phi, z) = prep(explainer.explain(model, &y, &erng)?.values);
            let diff = numerics::norm2(&numerics::sub(&phi, &center));
            let step = cfg.ball_norm.norm(u);
            let ratio = if step > 0.0 { diff / step } else { 0.0 };
            Ok((diff, ratio, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SensitivityEstimate { max: 0.0, lips: 0.0, zero_attribution: false, n: offsets.len() };
    for (diff, ratio, z) in rows {
        out.max = out.max.max(diff);
        out.lips = out.lips.max(ratio);
        zero |= z;
    }
    out.zero_attribution = zero;
    Ok(out)
}

/// Max- and Lipschitz-sensitivity on `cfg.n_sens` shared ball samples.
pub fn sensitivity(
    explainer: &Explainer,
    model: &dyn Predictor,
    x: &[f64],
    cfg: &MeasureConfig,
    rng: &RngStream,
) -> Result<SensitivityEstimate> {
    cfg.validate()?;
    let offsets = ball_offsets(cfg, x.len(), cfg.n_sens, rng)?;
    sensitivity_on_offsets(explainer, model, x, &offsets, cfg, rng)
}

pub fn sens_max(explainer: &Explainer, model: &dyn Predictor, x: &[f64], cfg: &MeasureConfig, rng: &RngStream) -> Result<f64> {
    Ok(sensitivity(explainer, model, x, cfg, rng)?.max)
}

pub fn sens_lips(explainer: &Explainer, model: &dyn Predictor, x: &[f64], cfg: &MeasureConfig, rng: &RngStream) -> Result<f64> {
    if !(cfg.radius > 0.0) {
        return Err(invalid("Lipschitz sensitivity needs radius > 0"));
    }
    Ok(sensitivity(explainer, model, x, cfg, rng)?.lips)
}

/// Frobenius norm of the central-difference Jacobian of `y ↦ Φ(y)`.
pub fn attribution_jacobian_norm(
    explainer: &Explainer,
    model: &dyn Predictor,
    y: &[f64],
    rng: &RngStream,
) -> Result<f64> {
    let mut probe = y.to_vec();
    let mut total = 0.0;
    for j in 0..y.len() {
        let h = fd_step(y[j]);
        probe[j] = y[j] + h;
        let up = explainer.explain(model, &probe, rng)?.values;
        probe[j] = y[j] - h;
        let down = explainer.explain(model, &probe, rng)?.values;
        probe[j] = y[j];
        total += up.iter().zip(&down).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>();
    }
    Ok(total.sqrt())
}

/// Sampled `sup ‖∇_y Φ(y)‖_F` over the ball, raw attributions.
pub fn sens_grad(explainer: &Explainer, model: &dyn Predictor, x: &[f64], cfg: &MeasureConfig, rng: &RngStream) -> Result<f64> {
    cfg.validate()?;
    let erng = rng.substream(EXPLAINER_STREAM);
    let offsets = ball_offsets(cfg, x.len(), cfg.n_sens, rng)?;
    let norms = offsets
        .par_iter()
        .map(|u| attribution_jacobian_norm(explainer, model, &numerics::add(x, u), &erng))
        .collect::<Result<Vec<_>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Shifts recorded perturbations to `x + u`: same `I_k`, fresh `Δf_k`.
pub fn shifted_samples(model: &dyn Predictor, set: &SampleSet, u: &[f64]) -> Result<SampleSet> {
    let y = numerics::add(&set.x, u);
    let fy = model.evaluate(&y)?;
    let delta_f = set
        .samples
        .par_iter()
        .map(|s| Ok(fy - model.evaluate(&numerics::sub(&y, &s.i_vec))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SampleSet { x: y, fx: fy, samples: set.samples.clone(), delta_f })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustInfidelity {
    pub value: f64,
    pub std_error: f64,
    /// Infidelity at `u = 0`.
    pub at_origin: f64,
    pub argmax: Vec<f64>,
    pub n_outer: usize,
}

/// Offsets for the robust-infidelity maximization: `u_0 = 0`, then `n_outer − 1` ball draws.
pub fn outer_offsets(cfg: &MeasureConfig, d: usize, n_outer: usize, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    if n_outer == 0 {
        return Err(invalid("robust infidelity needs n_outer >= 1"));
    }
    let mut offsets = vec![vec![0.0; d]];
    let stream = rng.substream(BALL_STREAM).substream(1);
    for k in 1..n_outer as u64 {
        offsets.push(cfg.ball_norm.sample(&mut stream.substream(k), d, cfg.radius)?);
    }
    Ok(offsets)
}

/// `max_u INFD(Φ(x+u), f, x+u)` over [`outer_offsets`].
///
/// The perturbations `I_k` are drawn once at `x` and reused at every `x + u`,
/// and the attribution is recomputed at each shifted input.
pub fn robust_infidelity(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    cfg: &MeasureConfig,
    n_outer: usize,
    rng: &RngStream,
) -> Result<RobustInfidelity> {
    cfg.validate()?;
    let base = record_samples(model, family, x, cfg, rng)?;
    let offsets = outer_offsets(cfg, x.len(), n_outer, rng)?;
    let erng = rng.substream(EXPLAINER_STREAM);
    let values = offsets
        .par_iter()
        .map(|u| {
            let set = shifted_samples(model, &base, u)?;
            let attr = explainer.explain(model, &set.x, &erng)?;
            infidelity_on_samples(&attr, &set, cfg.apply_optimal_scaling)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if v.value > values[best].value {
            best = k;
        }
    }
    Ok(RobustInfidelity {
        value: values[best].value,
        std_error: values[best].std_error,
        at_origin: values[0].value,
        argmax: offsets[best].clone(),
        n_outer,
    })
}

/// Per-`(I_a, z_b)` quantities on a shared grid of perturbations and kernel points.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingGrid {
    /// `r_ab = I_aᵀΦ(z_b) − [f(x) − f(x − I_a)]`
    pub residual_at_x: Vec<Vec<f64>>,
    /// `s_ab = I_aᵀΦ(z_b) − [f(z_b) − f(z_b − I_a)]`
    pub residual_at_z: Vec<Vec<f64>>,
    /// `g_ab = [f(z_b) − f(z_b − I_a)] − [f(x) − f(x − I_a)]`
    pub function_shift: Vec<Vec<f64>>,
}

/// Estimates of the smoothing constants and of both sides of the smoothed
/// infidelity inequality, all on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConstants {
    pub c1: f64,
    pub c1_se: f64,
    pub c2: f64,
    pub c2_se: f64,
    /// Unscaled infidelity of the smoothed attribution `mean_b Φ(z_b)` at `x`.
    pub smoothed_infidelity: f64,
    pub smoothed_infidelity_se: f64,
    /// Kernel average of the unscaled base infidelity at `z_b`.
    pub base_infidelity: f64,
    pub base_infidelity_se: f64,
    pub n_perturbations: usize,
    pub n_kernel: usize,
}

/// Splits a budget `n` into a `√n × √n` grid.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let side = ((n as f64).sqrt().ceil() as usize).max(1);
    (side, side)
}

pub fn smoothing_grid(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    kernel: &SmoothingKernel,
    n_perturbations: usize,
    n_kernel: usize,
    rng: &RngStream,
) -> Result<SmoothingGrid> {
    kernel.validate()?;
    if n_perturbations == 0 || n_kernel == 0 {
        return Err(invalid("smoothing grid needs at least one perturbation and one kernel point"));
    }
    let set = SampleSet::record(model, family, x, n_perturbations, &rng.substream(PERTURBATION_STREAM))?;
    let krng = rng.substream(KERNEL_STREAM);
    let erng = rng.substream(EXPLAINER_STREAM);
    let points = (0..n_kernel as u64)
        .into_par_iter()
        .map(|b| {
            let z = kernel.sample(&mut krng.substream(b), x)?;
            let phi = explainer.explain(model, &z, &erng)?;
            if phi.locality != Locality::Local {
                return Err(Error::Locality("smoothing constants need a local explainer".into()));
            }
            let fz = model.evaluate(&z)?;
            let dfz = set
                .samples
                .iter()
                .map(|s| Ok(fz - model.evaluate(&numerics::sub(&z, &s.i_vec))?))
                .collect::<Result<Vec<f64>>>()?;
            Ok((phi.values, dfz))
        })
        .collect::<Result<Vec<_>>>()?;
    let na = set.len();
    let mut grid = SmoothingGrid {
        residual_at_x: vec![vec![0.0; n_kernel]; na],
        residual_at_z: vec![vec![0.0; n_kernel]; na],
        function_shift: vec![vec![0.0; n_kernel]; na],
    };
    for (a, s) in set.samples.iter().enumerate() {
        for (b, (phi, dfz)) in points.iter().enumerate() {
            let proj = numerics::dot(&s.i_vec, phi);
            grid.residual_at_x[a][b] = proj - set.delta_f[a];
            grid.residual_at_z[a][b] = proj - dfz[a];
            grid.function_shift[a][b] = dfz[a] - set.delta_f[a];
        }
    }
    Ok(grid)
}

fn row_mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

fn row_mean_sq(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64
}

/// Delta-method standard error of `mean(p)/mean(q)` from per-row pairs.
fn ratio_se(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len() as f64;
    if p.len() < 2 {
        return 0.0;
    }
    let mp = p.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let ratio = mp / mq;
    let lin: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - ratio * b) / mq).collect();
    numerics::mean_and_stderr(&lin).1
}

impl SmoothingGrid {
    pub fn constants(&self) -> Result<SmoothingConstants> {
        let na = self.residual_at_x.len();
        let nb = self.residual_at_x.first().map_or(0, Vec::len);
        let denom_rows: Vec<f64> = self.residual_at_x.iter().map(|r| row_mean_sq(r)).collect();
        let c1_rows: Vec<f64> = self.function_shift.iter().map(|r| row_mean_sq(r)).collect();
        let c2_rows: Vec<f64> = self.residual_at_x.iter().map(|r| row_mean(r).powi(2)).collect();
        let base_rows: Vec<f64> = self.residual_at_z.iter().map(|r| row_mean_sq(r)).collect();
        let denom = denom_rows.iter().sum::<f64>() / na as f64;
        if !(denom > 0.0) {
            return Err(Error::Degenerate("smoothed residual vanishes, C1 and C2 are undefined".into()));
        }
        let (smoothed, smoothed_se) = numerics::mean_and_stderr(&c2_rows);
        let (base, base_se) = numerics::mean_and_stderr(&base_rows);
        Ok(SmoothingConstants {
            c1: c1_rows.iter().sum::<f64>() / na as f64 / denom,
            c1_se: ratio_se(&c1_rows, &denom_rows),
            c2: smoothed / denom,
            c2_se: ratio_se(&c2_rows, &denom_rows),
            smoothed_infidelity: smoothed,
            smoothed_infidelity_se: smoothed_se,
            base_infidelity: base,
            base_infidelity_se: base_se,
            n_perturbations: na,
            n_kernel: nb,
        })
    }
}

/// Smoothing constants on a `√n × √n` grid.
pub fn smoothing_constants(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    kernel: &SmoothingKernel,
    n: usize,
    rng: &RngStream,
) -> Result<SmoothingConstants> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let (na, nb) = grid_shape(n);
    smoothing_grid(model, explainer, x, family, kernel, na, nb, rng)?.constants()
}

/// Largest `C1` and `C2` over a finite set of evaluation points; point `k`
/// draws from `rng.substream(k)`.
pub fn max_smoothing_constants(
    model: &dyn Predictor,
    explainer: &Explainer,
    points: &[Vec<f64>],
    family: &PerturbationFamily,
    kernel: &SmoothingKernel,
    n: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(invalid("need at least one point"));
    }
    let constants = points
        .par_iter()
        .enumerate()
        .map(|(k, x)| smoothing_constants(model, explainer, x, family, kernel, n, &rng.substream(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(constants.iter().fold((0.0, 0.0), |(c1, c2), c| (f64::max(c1, c.c1), f64::max(c2, c.c2))))
}

/// Ratio of smoothed function-difference variation to the smoothed residual at `x`.
pub fn estimate_c1(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    kernel: &SmoothingKernel,
    n: usize,
    rng: &RngStream,
) -> Result<f64> {
    Ok(smoothing_constants(model, explainer, x, family, kernel, n, rng)?.c1)
}

/// Jensen ratio of the squared kernel-averaged residual to the averaged squared residual at `x`.
pub fn estimate_c2(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    kernel: &SmoothingKernel,
    n: usize,
    rng: &RngStream,
) -> Result<f64> {
    Ok(smoothing_constants(model, explainer, x, family, kernel, n, rng)?.c2)
}

/// Which optional measures to compute in [`measure`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSelection {
    pub sens_grad: bool,
    pub sens_lips: bool,
    /// Number of outer offsets for robust infidelity; 0 skips it.
    pub rinfd_outer: usize,
    /// Fit optimal explainers on the infidelity samples themselves.
    pub shared_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub method: String,
    pub locality: Locality,
    pub infidelity: f64,
    pub infidelity_se: f64,
    pub scaling_alpha: f64,
    pub sens_max: f64,
    pub sens_grad: Option<f64>,
    pub sens_lips: Option<f64>,
    pub rinfd: Option<f64>,
    pub zero_attribution: bool,
    pub n_infd: usize,
    pub n_sens: usize,
    pub seed: u64,
}

/// All selected measures for one `(input, explainer)` pair.
///
/// `set` must have been recorded by [`record_samples`] with the same `rng`.
#[allow(clippy::too_many_arguments)]
pub fn measure(
    model: &dyn Predictor,
    explainer: &Explainer,
    x: &[f64],
    family: &PerturbationFamily,
    set: &SampleSet,
    cfg: &MeasureConfig,
    selection: &MeasureSelection,
    rng: &RngStream,
) -> Result<MeasureReport> {
    cfg.validate()?;
    let attr = if selection.shared_samples {
        attribution_on_shared(explainer, model, set, rng)?
    } else {
        explainer.explain(model, x, &rng.substream(EXPLAINER_STREAM))?
    };
    let infd = infidelity_on_samples(&attr, set, cfg.apply_optimal_scaling)?;
    let sens = sensitivity(explainer, model, x, cfg, rng)?;
    let sens_grad = if selection.sens_grad { Some(sens_grad(explainer, model, x, cfg, rng)?) } else { None };
    let rinfd = if selection.rinfd_outer > 0 {
        Some(robust_infidelity(model, explainer, x, family, cfg, selection.rinfd_outer, rng)?.value)
    } else {
        None
    };
    Ok(MeasureReport {
        method: explainer.tag(),
        locality: attr.locality,
        infidelity: infd.value,
        infidelity_se: infd.std_error,
        scaling_alpha: infd.alpha,
        sens_max: sens.max,
        sens_grad,
        sens_lips: selection.sens_lips.then_some(sens.lips),
        rinfd,
        zero_attribution: sens.zero_attribution,
        n_infd: infd.n,
        n_sens: cfg.n_sens,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Model, QuadraticModel, ToyFunction};
    use crate::numerics::{derive_stream, SquareMatrix};
    use crate::perturbations::Baseline;

    fn quad(diag: &[f64]) -> Model {
        Model::Quadratic(QuadraticModel::new(SquareMatrix::diagonal(diag), vec![0.0; diag.len()], 0.0).unwrap())
    }

    #[test]
    fn constants_maximized_over_points() {
        let lin = Model::Quadratic(QuadraticModel::linear(vec![1.0, -1.0], 0.0));
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 0.5 };
        let k = SmoothingKernel::Gaussian { sigma: 0.2 };
        let pts = vec![vec![0.1, 0.2], vec![1.0, -1.0]];
        let constant = Explainer::Constant { values: None };
        let (c1, c2) = max_smoothing_constants(&lin, &constant, &pts, &fam, &k, 100, &derive_stream(0, 0)).unwrap();
        assert!(c1 < 1e-20 && c2 <= 1.0 + 1e-12, "{c1} {c2}");
        let h = Model::Quadratic(QuadraticModel::new(SquareMatrix::diagonal(&[3.0, 1.0]), vec![0.0, 0.0], 0.0).unwrap());
        let each: Vec<f64> = pts
            .iter()
            .enumerate()
            .map(|(i, x)| smoothing_constants(&h, &Explainer::Gradient, x, &fam, &k, 100, &derive_stream(0, 0).substream(i as u64)).unwrap().c1)
            .collect();
        let (c1, _) = max_smoothing_constants(&h, &Explainer::Gradient, &pts, &fam, &k, 100, &derive_stream(0, 0)).unwrap();
        assert_eq!(c1, each[0].max(each[1]));
    }

    #[test]
    fn optimal_scale_examples() {
        assert_eq!(optimal_scale(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 1.0);
        assert_eq!(optimal_scale(&[2.0, -4.0], &[1.0, -2.0]).unwrap(), 0.5);
        assert_eq!(optimal_scale(&[0.0, 0.0], &[1.0, -2.0]).unwrap(), 1.0);
        assert!(optimal_scale(&[0.0], &[1.0, -2.0]).is_err());
    }

    #[test]
    fn infidelity_examples() {
        let rng = derive_stream(3, 0);
        let lin = Model::Quadratic(QuadraticModel::linear(vec![2.0, -1.0], 0.3));
        let g = Explainer::Gradient.explain(&lin, &[1.0, 2.0], &rng).unwrap();
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        let v = infidelity(&lin, &g, &[1.0, 2.0], &fam, &MeasureConfig::default(), &rng).unwrap();
        assert!(v.value <= 1e-10);

        let model = quad(&[1.0, 3.0]);
        let x = [0.5, -1.0];
        let ig = Explainer::IntegratedGradients { baseline: Baseline::Zero, steps: 512 }.explain(&model, &x, &rng).unwrap();
        let det = PerturbationFamily::BaselineDiff { x0: Baseline::Zero };
        assert!(infidelity(&model, &ig, &x, &det, &MeasureConfig::default(), &rng).unwrap().value <= 1e-8);

        let zero = Explainer::Constant { values: Some(vec![0.0, 0.0]) }.explain(&model, &x, &rng).unwrap();
        let cfg = MeasureConfig { apply_optimal_scaling: false, n_infd: 300, ..Default::default() };
        let est = infidelity(&model, &zero, &x, &fam, &cfg, &rng).unwrap();
        let set = record_samples(&model, &fam, &x, &cfg, &rng).unwrap();
        let fx = model.evaluate(&x).unwrap();
        let mut acc = 0.0;
        for s in &set.samples {
            let df = fx - model.evaluate(&numerics::sub(&x, &s.i_vec)).unwrap();
            acc += df * df;
        }
        assert_eq!(est.value, acc / 300.0);
    }

    #[test]
    fn global_attribution_needs_masks() {
        let model = quad(&[1.0, 1.0]);
        let rng = derive_stream(0, 0);
        let occ = Explainer::occlusion().explain(&model, &[1.0, 1.0], &rng).unwrap();
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        assert!(matches!(
            infidelity(&model, &occ, &[1.0, 1.0], &fam, &MeasureConfig::default(), &rng),
            Err(Error::Locality(_))
        ));
    }

    #[test]
    fn sensitivity_examples() {
        let rng = derive_stream(5, 0);
        let lin = Model::Quadratic(QuadraticModel::linear(vec![2.0, -1.0], 0.0));
        let cfg = MeasureConfig::default();
        assert_eq!(sens_max(&Explainer::Constant { values: None }, &lin, &[1.0, 1.0], &cfg, &rng).unwrap(), 0.0);
        assert_eq!(sens_max(&Explainer::Gradient, &lin, &[1.0, 1.0], &cfg, &rng).unwrap(), 0.0);
        let toy = Model::Toy(ToyFunction);
        let s = sens_max(&Explainer::Gradient, &toy, &[20.0, 11.95], &cfg, &rng).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-12, "{s}");
    }

    #[test]
    fn sens_grad_of_quadratic_is_frobenius() {
        let h = SquareMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, -1.0]]).unwrap();
        let model = Model::Quadratic(QuadraticModel::new(h.clone(), vec![0.3, 0.1], 0.0).unwrap());
        let v = sens_grad(&Explainer::Gradient, &model, &[0.2, 0.7], &MeasureConfig::default(), &derive_stream(1, 1)).unwrap();
        assert!((v - h.frobenius()).abs() < 1e-3);
        let c = sens_grad(&Explainer::Constant { values: None }, &model, &[0.2, 0.7], &MeasureConfig::default(), &derive_stream(1, 1));
        assert_eq!(c.unwrap(), 0.0);
    }

    #[test]
    fn sens_lips_quadratic() {
        let model = quad(&[2.0, 1.0]);
        let cfg = MeasureConfig { ball_norm: BallNorm::L2, ..MeasureConfig::default().raw() };
        let s = sensitivity(&Explainer::Gradient, &model, &[0.3, -0.2], &cfg, &derive_stream(2, 2)).unwrap();
        assert!((1.0..=2.0 + 1e-12).contains(&s.lips), "{}", s.lips);
        assert!(s.max <= s.lips * cfg.radius + 1e-15);
    }

    #[test]
    fn robust_infidelity_examples() {
        let rng = derive_stream(8, 1);
        let lin = Model::Quadratic(QuadraticModel::linear(vec![2.0, -1.0], 0.0));
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        let cfg = MeasureConfig::default();
        let r = robust_infidelity(&lin, &Explainer::Gradient, &[1.0, 1.0], &fam, &cfg, 10, &rng).unwrap();
        assert!(r.value < 1e-12);
        let toy = Model::Toy(ToyFunction);
        let x = [20.0, 11.95];
        let fam = PerturbationFamily::BaselineDiff { x0: Baseline::Vector(vec![19.5, 11.95]) };
        let cfg = cfg.raw();
        let r = robust_infidelity(&toy, &Explainer::Gradient, &x, &fam, &cfg, 50, &rng).unwrap();
        assert!(r.value >= r.at_origin);
        assert!(r.value >= 1.1 * r.at_origin, "{r:?}");
    }

    #[test]
    fn smoothing_constant_examples() {
        let rng = derive_stream(4, 4);
        let lin = Model::Quadratic(QuadraticModel::linear(vec![2.0, -1.0], 0.0));
        let fam = PerturbationFamily::NoisyBaseline { x0: Baseline::Zero, sigma: 1.0 };
        let wrong = Explainer::Constant { values: Some(vec![1.0, 1.0]) };
        let k = SmoothingKernel::Gaussian { sigma: 0.3 };
        let c = smoothing_constants(&lin, &wrong, &[1.0, 1.0], &fam, &k, 400, &rng).unwrap();
        assert!(c.c1 < 1e-20, "{}", c.c1);
        let point = SmoothingKernel::UniformBox { radius: 0.0 };
        let model = quad(&[1.0, 2.0]);
        let c = smoothing_constants(&model, &Explainer::Gradient, &[1.0, 1.0], &fam, &point, 400, &rng).unwrap();
        assert_eq!(c.c1, 0.0);
        assert!((c.c2 - 1.0).abs() < 1e-12);
        let c = smoothing_constants(&model, &Explainer::Gradient, &[1.0, 1.0], &fam, &k, 400, &rng).unwrap();
        assert!(c.c2 <= 1.0 + 1e-12);
    }

    #[test]
    fn c2_drops_for_alternating_residuals() {
        let toy = Model::Toy(ToyFunction);
        let x = [20.0, 11.95];
        let fam = PerturbationFamily::BaselineDiff { x0: Baseline::Zero };
        let k = SmoothingKernel::UniformBox { radius: 0.1 };
        let grid = smoothing_grid(&toy, &Explainer::Gradient, &x, &fam, &k, 1, 400, &derive_stream(6, 0)).unwrap();
        let c = grid.constants().unwrap();
        // direct double loop
        let phi_pts: Vec<Vec<f64>> = (0..400u64)
            .map(|b| k.sample(&mut derive_stream(6, 0).substream(KERNEL_STREAM).substream(b), &x).unwrap())
            .map(|z| toy.gradient(&z).unwrap())
            .collect();
        let df = toy.evaluate(&x).unwrap() - toy.evaluate(&[0.0, 0.0]).unwrap();
        let r: Vec<f64> = phi_pts.iter().map(|p| numerics::dot(&x, p) - df).collect();
        let num = (r.iter().sum::<f64>() / 400.0).powi(2);
        let den = r.iter().map(|v| v * v).sum::<f64>() / 400.0;
        assert!((c.c2 - num / den).abs() < 1e-12);
        assert!(c.c2 <= 0.9, "{}", c.c2);
    }
}
