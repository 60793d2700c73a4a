//! Black-box scalar predictors over `R^d`.
//!
//! Every explainer and estimator in this crate only talks to a model through
//! the [`Predictor`] trait: a value and, optionally, an analytic gradient.

mod io;
mod mlp;
mod toy;

use rayon::prelude::*;

pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use mlp::{sigmoid, softplus, Activation, Layer, MlpModel};
pub use toy::{ToyFunction, KINK_TOLERANCE};

use crate::error::{check_dim, invalid, Error, Result};
use crate::numerics::{self, RngStream, SquareMatrix};

/// Relative central-difference step for coordinate `i`: `1e-5 · max(1, |x_i|)`.
#[inline]
pub fn fd_step(xi: f64) -> f64 {
    1e-5 * xi.abs().max(1.0)
}

/// A scalar black-box predictor.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Analytic gradient when the model provides one, central differences otherwise.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        finite_difference_gradient(self, x)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }
}

/// Central finite-difference gradient with step [`fd_step`].
pub fn finite_difference_gradient<P: Predictor + ?Sized>(model: &P, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.input_dim(), x.len())?;
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let up = model.evaluate(&probe)?;
        probe[i] = x[i] - h;
        let down = model.evaluate(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `f(x) = ½ xᵀHx + wᵀx + c` with symmetric `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    h: SquareMatrix,
    w: Vec<f64>,
    c: f64,
}

impl QuadraticModel {
    pub fn new(h: SquareMatrix, w: Vec<f64>, c: f64) -> Result<Self> {
        check_dim(h.dim(), w.len())?;
        if !numerics::all_finite(h.as_slice()) || !numerics::all_finite(&w) || !c.is_finite() {
            return Err(Error::NonFinite("quadratic model"));
        }
        let asym = h.relative_asymmetry();
        if asym > numerics::SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self { h, w, c })
    }

    /// Affine model `wᵀx + c`.
    pub fn linear(w: Vec<f64>, c: f64) -> Self {
        let h = SquareMatrix::zeros(w.len());
        Self { h, w, c }
    }

    pub fn hessian(&self) -> &SquareMatrix {
        &self.h
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.w
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Exact Hessian bound `‖H‖₂`.
    pub fn hessian_norm(&self) -> f64 {
        numerics::symmetric_spectral_norm(&self.h)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let hx = self.h.mul_vec(x);
        0.5 * numerics::dot(x, &hx) + numerics::dot(&self.w, x) + self.c
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        numerics::add(&self.h.mul_vec(x), &self.w)
    }
}

/// Gradient together with a flag for points where the model is not smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub values: Vec<f64>,
    pub nonsmooth: bool,
}

/// The in-repo model zoo.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpModel),
    Quadratic(QuadraticModel),
    Toy(ToyFunction),
}

impl Model {
    /// Gradient plus a non-smoothness flag (set on the toy function's band
    /// boundaries).
    pub fn gradient_report(&self, x: &[f64]) -> Result<GradientReport> {
        check_dim(self.input_dim(), x.len())?;
        match self {
            Model::Toy(t) => {
                let (g, nonsmooth) = t.gradient(x[0], x[1]);
                Ok(GradientReport { values: g.to_vec(), nonsmooth })
            }
            _ => Ok(GradientReport { values: self.gradient(x)?, nonsmooth: false }),
        }
    }

    pub fn as_mlp(&self) -> Option<&MlpModel> {
        match self {
            Model::Mlp(m) => Some(m),
            _ => None,
        }
    }
}

impl Predictor for Model {
    fn input_dim(&self) -> usize {
        match self {
            Model::Mlp(m) => m.input_dim(),
            Model::Quadratic(q) => q.dim(),
            Model::Toy(_) => 2,
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Mlp(m) => m.evaluate(x),
            Model::Quadratic(q) => {
                check_dim(q.dim(), x.len())?;
                Ok(q.value(x))
            }
            Model::Toy(t) => {
                check_dim(2, x.len())?;
                Ok(t.value(x[0], x[1]))
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Mlp(m) => m.gradient(x),
            Model::Quadratic(q) => {
                check_dim(q.dim(), x.len())?;
                Ok(q.grad(x))
            }
            Model::Toy(t) => {
                check_dim(2, x.len())?;
                Ok(t.gradient(x[0], x[1]).0.to_vec())
            }
        }
    }

    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

impl From<MlpModel> for Model {
    fn from(m: MlpModel) -> Self {
        Model::Mlp(m)
    }
}

impl From<QuadraticModel> for Model {
    fn from(q: QuadraticModel) -> Self {
        Model::Quadratic(q)
    }
}

impl From<ToyFunction> for Model {
    fn from(t: ToyFunction) -> Self {
        Model::Toy(t)
    }
}

/// Hessian from central differences of the gradient, symmetrized.
pub fn finite_difference_hessian<P: Predictor + ?Sized>(model: &P, x: &[f64]) -> Result<SquareMatrix> {
    let d = x.len();
    let mut h = SquareMatrix::zeros(d);
    let mut probe = x.to_vec();
    for j in 0..d {
        let step = fd_step(x[j]);
        probe[j] = x[j] + step;
        let up = model.gradient(&probe)?;
        probe[j] = x[j] - step;
        let down = model.gradient(&probe)?;
        probe[j] = x[j];
        for i in 0..d {
            h.set(i, j, (up[i] - down[i]) / (2.0 * step));
        }
    }
    Ok(h.symmetrized())
}

/// Upper estimate of `sup ‖∇²f‖₂` over the L∞ ball of `radius` around `x`.
///
/// Exact for quadratic models. Otherwise the maximum, over `x` and
/// `n_probe − 1` uniform ball points, of the finite-difference Hessian's
/// spectral norm (50 power iterations).
pub fn hessian_norm_bound(model: &Model, x: &[f64], radius: f64, n_probe: usize, rng: &RngStream) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("radius must be >= 0, got {radius}")));
    }
    check_dim(model.input_dim(), x.len())?;
    if let Model::Quadratic(q) = model {
        return Ok(q.hessian_norm());
    }
    let n = n_probe.max(1);
    let norms = (0..n)
        .into_par_iter()
        .map(|k| {
            let point = if k == 0 {
                x.to_vec()
            } else {
                numerics::sample_uniform_box(&mut rng.substream(k as u64), x, radius)?
            };
            let h = finite_difference_hessian(model, &point)?;
            Ok(numerics::power_iteration_norm(&h, 50))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_stream;

    #[test]
    fn quadratic_examples() {
        let q: Model = QuadraticModel::new(SquareMatrix::identity(2), vec![0.0, 0.0], 0.0).unwrap().into();
        assert_eq!(q.evaluate(&[1.0, 1.0]).unwrap(), 1.0);
        let q2: Model = QuadraticModel::new(SquareMatrix::diagonal(&[2.0, 2.0]), vec![0.0, 0.0], 0.0).unwrap().into();
        assert_eq!(q2.gradient(&[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        assert!(matches!(q.evaluate(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn toy_through_model() {
        let t = Model::Toy(ToyFunction);
        assert_eq!(t.evaluate(&[20.0, 11.9]).unwrap(), 16.0);
        assert_eq!(t.gradient(&[20.0, 11.9]).unwrap(), vec![1.0, 0.0]);
        let flagged = t.gradient_report(&[13.0, 11.0]).unwrap();
        assert!(flagged.nonsmooth);
        assert!(!t.gradient_report(&[20.0, 11.9]).unwrap().nonsmooth);
    }

    #[test]
    fn hessian_bound_quadratic_is_exact() {
        let rng = derive_stream(0, 0);
        let q: Model = QuadraticModel::new(SquareMatrix::diagonal(&[3.0, 1.0]), vec![0.0, 0.0], 0.0).unwrap().into();
        assert_eq!(hessian_norm_bound(&q, &[0.0, 0.0], 0.1, 10, &rng).unwrap(), 3.0);
        let lin: Model = QuadraticModel::linear(vec![1.0, -2.0], 0.5).into();
        assert_eq!(hessian_norm_bound(&lin, &[0.0, 0.0], 0.1, 10, &rng).unwrap(), 0.0);
    }

    /// Dense Hessian from second differences of function values only.
    fn value_hessian(model: &Model, x: &[f64]) -> SquareMatrix {
        let d = x.len();
        let h = 1e-4;
        let f = |p: &[f64]| model.evaluate(p).unwrap();
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut pp = x.to_vec();
                let mut pm = x.to_vec();
                let mut mp = x.to_vec();
                let mut mm = x.to_vec();
                pp[i] += h;
                pp[j] += h;
                pm[i] += h;
                pm[j] -= h;
                mp[i] -= h;
                mp[j] += h;
                mm[i] -= h;
                mm[j] -= h;
                m.set(i, j, (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h));
            }
        }
        m.symmetrized()
    }

    #[test]
    fn hessian_bound_matches_dense_probe_oracle() {
        let mlp = MlpModel::new(2, vec![Layer::unbiased(vec![vec![1.5, -0.7]], Activation::Softplus)], 0).unwrap();
        let model = Model::Mlp(mlp);
        let x = [0.3, 0.2];
        let rng = derive_stream(4, 4);
        let estimate = hessian_norm_bound(&model, &x, 0.5, 200, &rng).unwrap();
        let mut oracle: f64 = 0.0;
        for k in 0..200u64 {
            let p = if k == 0 {
                x.to_vec()
            } else {
                numerics::sample_uniform_box(&mut rng.substream(k), &x, 0.5).unwrap()
            };
            oracle = oracle.max(numerics::symmetric_spectral_norm(&value_hessian(&model, &p)));
        }
        assert!((estimate - oracle).abs() <= 0.1 * oracle, "{estimate} vs {oracle}");
    }
}
