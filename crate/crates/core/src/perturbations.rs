//! Perturbation distributions `μ_I` and their recorded sample sets.
//!
//! A draw yields the perturbation `I`; mask-structured families also report
//! the binary mask `z` with `I = x ⊙ z`. The model sees `x − I`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::models::Predictor;
use crate::numerics::{self, RngStream, SquareMatrix};

/// Monte Carlo samples summed per chunk before the chunks are combined in order.
pub const REDUCTION_CHUNK: usize = 256;

/// Reference input, resolved against the dimension of `x`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Zero,
    Constant(f64),
    Vector(Vec<f64>),
}


impl Baseline {
    pub fn resolve(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            Baseline::Zero => Ok(vec![0.0; d]),
            Baseline::Constant(c) => Ok(vec![*c; d]),
            Baseline::Vector(v) => {
                check_dim(d, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationFamily {
    /// `I = x − x0`.
    BaselineDiff { x0: Baseline },
    /// `I = (x − x0)` on `subset`, zero elsewhere.
    SubsetBaseline { subset: Vec<usize>, x0: Baseline },
    /// `I = x − (x0 + ε)`, `ε ~ N(0, σ² I)`.
    NoisyBaseline { x0: Baseline, sigma: f64 },
    /// `I = x − x0_j` with `j` drawn by `weights`.
    MultiBaseline { baselines: Vec<Vec<f64>>, weights: Vec<f64> },
    /// `I = ε e_i`, `i` uniform.
    CoordinateEps { epsilon: f64 },
    /// `I = e_i ⊙ x`, `i` uniform.
    CoordinateTimesX,
    /// `I = x ⊙ z`, `z` from the Shapley-kernel subset law.
    ShapleyKernel,
    /// `I = x ⊙ z`, `z` a square patch on a `height × width` grid.
    SquareRemoval { height: usize, width: usize, smin: usize, smax: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub i_vec: Vec<f64>,
    pub mask: Option<Vec<f64>>,
}

impl PerturbationFamily {
    /// Square removal on a `height × width` image with side lengths `1..=min(10, height, width)`.
    pub fn square_default(height: usize, width: usize) -> Self {
        PerturbationFamily::SquareRemoval { height, width, smin: 1, smax: 10.min(height).min(width) }
    }

    /// Multiple baselines with uniform weights.
    pub fn multi_uniform(baselines: Vec<Vec<f64>>) -> Self {
        let n = baselines.len().max(1);
        let weights = vec![1.0 / n as f64; baselines.len()];
        PerturbationFamily::MultiBaseline { baselines, weights }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationFamily::BaselineDiff { .. } => "baseline",
            PerturbationFamily::SubsetBaseline { .. } => "subset-baseline",
            PerturbationFamily::NoisyBaseline { .. } => "noisy-baseline",
            PerturbationFamily::MultiBaseline { .. } => "multi-baseline",
            PerturbationFamily::CoordinateEps { .. } => "coord-eps",
            PerturbationFamily::CoordinateTimesX => "coord-x",
            PerturbationFamily::ShapleyKernel => "shapley",
            PerturbationFamily::SquareRemoval { .. } => "square",
        }
    }

    /// Deterministic families produce the same `I` on every draw.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, PerturbationFamily::BaselineDiff { .. } | PerturbationFamily::SubsetBaseline { .. })
    }

    /// Families whose draws carry a binary mask with `I = x ⊙ z`.
    pub fn has_masks(&self) -> bool {
        matches!(
            self,
            PerturbationFamily::CoordinateTimesX | PerturbationFamily::ShapleyKernel | PerturbationFamily::SquareRemoval { .. }
        )
    }

    /// Checks the parameters against an input of dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            PerturbationFamily::BaselineDiff { x0 } => x0.resolve(d).map(drop),
            PerturbationFamily::SubsetBaseline { subset, x0 } => {
                x0.resolve(d)?;
                if let Some(&bad) = subset.iter().find(|&&i| i >= d) {
                    return Err(invalid(format!("subset index {bad} out of range for d = {d}")));
                }
                Ok(())
            }
            PerturbationFamily::NoisyBaseline { x0, sigma } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(invalid(format!("sigma must be finite and >= 0, got {sigma}")));
                }
                x0.resolve(d).map(drop)
            }
            PerturbationFamily::MultiBaseline { baselines, weights } => {
                if baselines.is_empty() || baselines.len() != weights.len() {
                    return Err(invalid("multi-baseline needs one weight per baseline and at least one baseline"));
                }
                for b in baselines {
                    check_dim(d, b.len())?;
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(invalid("multi-baseline weights must be >= 0"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("multi-baseline weights sum to {total}, expected 1")));
                }
                Ok(())
            }
            PerturbationFamily::CoordinateEps { epsilon } => {
                if !epsilon.is_finite() || *epsilon == 0.0 {
                    return Err(invalid(format!("epsilon must be finite and nonzero, got {epsilon}")));
                }
                nonempty(d)
            }
            PerturbationFamily::CoordinateTimesX => nonempty(d),
            PerturbationFamily::ShapleyKernel => {
                if d < 2 {
                    return Err(invalid(format!("the Shapley kernel needs d >= 2, got {d}")));
                }
                Ok(())
            }
            PerturbationFamily::SquareRemoval { height, width, smin, smax } => {
                check_square(*height, *width, *smin, *smax)?;
                if height * width != d {
                    return Err(invalid(format!("square removal on a {height}x{width} grid needs d = {}, got {d}", height * width)));
                }
                Ok(())
            }
        }
    }

    /// One draw of `I` against `x`. Deterministic families ignore `rng`.
    pub fn draw(&self, x: &[f64], rng: &mut RngStream) -> Result<PerturbationSample> {
        let d = x.len();
        self.validate(d)?;
        Ok(self.draw_unchecked(x, rng))
    }

    fn draw_unchecked(&self, x: &[f64], rng: &mut RngStream) -> PerturbationSample {
        let d = x.len();
        let plain = |i_vec| PerturbationSample { i_vec, mask: None };
        let masked = |mask: Vec<f64>| PerturbationSample { i_vec: numerics::hadamard(x, &mask), mask: Some(mask) };
        match self {
            PerturbationFamily::BaselineDiff { x0 } => plain(numerics::sub(x, &x0.resolve(d).expect("validated"))),
            PerturbationFamily::SubsetBaseline { subset, x0 } => {
                let x0 = x0.resolve(d).expect("validated");
                let mut i_vec = vec![0.0; d];
                for &i in subset {
                    i_vec[i] = x[i] - x0[i];
                }
                plain(i_vec)
            }
            PerturbationFamily::NoisyBaseline { x0, sigma } => {
                let x0 = x0.resolve(d).expect("validated");
                plain((0..d).map(|i| x[i] - x0[i] - sigma * rng.standard_normal()).collect())
            }
            PerturbationFamily::MultiBaseline { baselines, weights } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut pick = baselines.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                plain(numerics::sub(x, &baselines[pick]))
            }
            PerturbationFamily::CoordinateEps { epsilon } => {
                let mut i_vec = vec![0.0; d];
                i_vec[rng.below(d)] = *epsilon;
                plain(i_vec)
            }
            PerturbationFamily::CoordinateTimesX => {
                let mut mask = vec![0.0; d];
                mask[rng.below(d)] = 1.0;
                masked(mask)
            }
            PerturbationFamily::ShapleyKernel => masked(draw_shapley_mask(rng, d)),
            PerturbationFamily::SquareRemoval { height, width, smin, smax } => {
                masked(square_mask(rng, *height, *width, *smin, *smax))
            }
        }
    }

    /// A sample the least-squares fit must reproduce exactly, if the family has one.
    ///
    /// The Shapley kernel's weight is infinite on the full coalition, so the
    /// fit is constrained to `zᵀΦ = f(x) − f(0)` at `z = 1`.
    pub fn pinned_sample(&self, x: &[f64]) -> Option<PerturbationSample> {
        match self {
            PerturbationFamily::ShapleyKernel => {
                Some(PerturbationSample { i_vec: x.to_vec(), mask: Some(vec![1.0; x.len()]) })
            }
            _ => None,
        }
    }
}

fn nonempty(d: usize) -> Result<()> {
    if d == 0 {
        Err(invalid("input dimension must be >= 1"))
    } else {
        Ok(())
    }
}

fn check_square(height: usize, width: usize, smin: usize, smax: usize) -> Result<()> {
    if smin < 1 || smin > smax || smax > height.min(width) {
        return Err(invalid(format!(
            "square sizes need 1 <= smin <= smax <= min(height, width); got smin={smin}, smax={smax} on {height}x{width}"
        )));
    }
    Ok(())
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Per-subset probabilities of the Shapley-kernel law, one entry per subset size
/// `1..d−1`. Every subset of size `k` has the listed probability.
pub fn shapley_subset_distribution(d: usize) -> Result<Vec<(usize, f64)>> {
    if d < 2 {
        return Err(invalid(format!("the Shapley kernel needs d >= 2, got {d}")));
    }
    // class mass (d−1)/(k(d−k)), shared by C(d,k) subsets
    let class: Vec<f64> = (1..d).map(|k| (d - 1) as f64 / (k * (d - k)) as f64).collect();
    let total: f64 = class.iter().sum();
    Ok((1..d)
        .map(|k| {
            let per_subset = (class[k - 1] / total).ln() - ln_choose(d, k);
            (k, per_subset.exp())
        })
        .collect())
}

fn draw_shapley_mask(rng: &mut RngStream, d: usize) -> Vec<f64> {
    let class: Vec<f64> = (1..d).map(|k| 1.0 / (k * (d - k)) as f64).collect();
    let total: f64 = class.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut size = d - 1;
    for (j, w) in class.iter().enumerate() {
        acc += w;
        if u < acc {
            size = j + 1;
            break;
        }
    }
    // partial Fisher-Yates for a uniform subset of `size`
    let mut idx: Vec<usize> = (0..d).collect();
    let mut mask = vec![0.0; d];
    for t in 0..size {
        let pick = t + rng.below(d - t);
        idx.swap(t, pick);
        mask[idx[t]] = 1.0;
    }
    mask
}

fn square_mask(rng: &mut RngStream, height: usize, width: usize, smin: usize, smax: usize) -> Vec<f64> {
    let s = smin + rng.below(smax - smin + 1);
    let top = rng.below(height - s + 1);
    let left = rng.below(width - s + 1);
    let mut mask = vec![0.0; height * width];
    for r in top..top + s {
        for c in left..left + s {
            mask[r * width + c] = 1.0;
        }
    }
    mask
}

/// Row-major `height × width` mask of a uniformly placed square with side in `smin..=smax`.
pub fn draw_square_mask(rng: &mut RngStream, height: usize, width: usize, smin: usize, smax: usize) -> Result<Vec<f64>> {
    check_square(height, width, smin, smax)?;
    Ok(square_mask(rng, height, width, smin, smax))
}

/// Adds `s · v vᵀ`, skipping zero entries of `v`.
fn add_sparse_outer(m: &mut SquareMatrix, s: f64, v: &[f64]) {
    let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    for &i in &nz {
        for &j in &nz {
            let cur = m.get(i, j);
            m.set(i, j, cur + s * v[i] * v[j]);
        }
    }
}

/// Mean of `v vᵀ` over `vectors`, summed in fixed chunks so the result does not
/// depend on the number of worker threads.
pub fn mean_outer(vectors: &[&[f64]], d: usize) -> SquareMatrix {
    let n = vectors.len();
    let mut total = SquareMatrix::zeros(d);
    if n == 0 {
        return total;
    }
    let partials: Vec<SquareMatrix> = vectors
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut m = SquareMatrix::zeros(d);
            for v in chunk {
                add_sparse_outer(&mut m, 1.0, v);
            }
            m
        })
        .collect();
    for p in &partials {
        total.add_assign(p);
    }
    total.scaled(1.0 / n as f64).symmetrized()
}

/// Mean of `w_k · v_k` in fixed chunks.
pub fn mean_weighted(vectors: &[&[f64]], weights: &[f64], d: usize) -> Vec<f64> {
    let n = vectors.len();
    let mut total = vec![0.0; d];
    if n == 0 {
        return total;
    }
    let partials: Vec<Vec<f64>> = vectors
        .par_chunks(REDUCTION_CHUNK)
        .zip(weights.par_chunks(REDUCTION_CHUNK))
        .map(|(vs, ws)| {
            let mut acc = vec![0.0; d];
            for (v, w) in vs.iter().zip(ws) {
                for i in 0..d {
                    acc[i] += w * v[i];
                }
            }
            acc
        })
        .collect();
    for p in &partials {
        for i in 0..d {
            total[i] += p[i];
        }
    }
    total.iter().map(|t| t / n as f64).collect()
}

/// `E[I Iᵀ]`: exact for deterministic families, an `n`-sample mean otherwise.
pub fn second_moment(family: &PerturbationFamily, x: &[f64], n: usize, rng: &RngStream) -> Result<SquareMatrix> {
    family.validate(x.len())?;
    let n = if family.is_deterministic() { 1 } else { n };
    if n == 0 {
        return Err(invalid("second moment needs n >= 1"));
    }
    let draws: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| family.draw_unchecked(x, &mut rng.substream(k as u64)).i_vec)
        .collect();
    let refs: Vec<&[f64]> = draws.iter().map(Vec::as_slice).collect();
    Ok(mean_outer(&refs, x.len()))
}

/// Perturbations drawn at `x` together with the model's response
/// `Δf = f(x) − f(x − I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Vec<f64>,
    pub fx: f64,
    pub samples: Vec<PerturbationSample>,
    pub delta_f: Vec<f64>,
}

impl SampleSet {
    /// Draws `n` samples (one for deterministic families), sample `k` from substream `k`.
    pub fn record(
        model: &dyn Predictor,
        family: &PerturbationFamily,
        x: &[f64],
        n: usize,
        rng: &RngStream,
    ) -> Result<Self> {
        check_dim(model.input_dim(), x.len())?;
        family.validate(x.len())?;
        let n = if family.is_deterministic() { 1 } else { n };
        if n == 0 {
            return Err(invalid("sample count must be >= 1"));
        }
        let fx = model.evaluate(x)?;
        let drawn: Vec<(PerturbationSample, f64)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let s = family.draw_unchecked(x, &mut rng.substream(k as u64));
                let df = fx - model.evaluate(&numerics::sub(x, &s.i_vec))?;
                Ok((s, df))
            })
            .collect::<Result<_>>()?;
        let (samples, delta_f) = drawn.into_iter().unzip();
        Ok(Self { x: x.to_vec(), fx, samples, delta_f })
    }

    /// Evaluates `Δf` for an explicitly given sample at the recorded `x`.
    pub fn response(&self, model: &dyn Predictor, sample: &PerturbationSample) -> Result<f64> {
        Ok(self.fx - model.evaluate(&numerics::sub(&self.x, &sample.i_vec))?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn has_masks(&self) -> bool {
        self.samples.iter().all(|s| s.mask.is_some())
    }

    pub fn perturbations(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.i_vec.as_slice()).collect()
    }

    /// Masks of every sample; errors when the family carries none.
    pub fn masks(&self) -> Result<Vec<&[f64]>> {
        self.samples
            .iter()
            .map(|s| {
                s.mask
                    .as_deref()
                    .ok_or_else(|| Error::Locality("perturbation family has no binary masks".into()))
            })
            .collect()
    }
}
