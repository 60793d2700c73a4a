//! Seeded generators for the desk-scale model corpora used by the checks.

use serde::{Deserialize, Serialize};

use crate::models::{Activation, Layer, MlpModel, Model, QuadraticModel};
use crate::numerics::{RngStream, SquareMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub model: Model,
    pub x: Vec<f64>,
}

/// Weight initialization for generated layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// `N(0, 2/(fan_in + fan_out))`
    Xavier,
    /// `N(0, scale²/fan_in)`
    Scaled(f64),
}

fn weights(rng: &mut RngStream, rows: usize, cols: usize, init: Init) -> Vec<Vec<f64>> {
    let std = match init {
        Init::Xavier => (2.0 / (rows + cols) as f64).sqrt(),
        Init::Scaled(s) => s / (cols as f64).sqrt(),
    };
    (0..rows).map(|_| (0..cols).map(|_| std * rng.standard_normal()).collect()).collect()
}

/// Zero-bias network with softplus on every layer, widths `dims[0] → … → dims[last]`.
pub fn softplus_mlp(rng: &mut RngStream, dims: &[usize], init: Init) -> MlpModel {
    let layers = dims
        .windows(2)
        .map(|w| Layer::unbiased(weights(rng, w[1], w[0], init), Activation::Softplus))
        .collect();
    MlpModel::new(dims[0], layers, 0).expect("generated dimensions chain")
}

/// Sharp softplus hidden layers with random biases and a linear read-out:
/// many kinks per unit length, so gradients vary quickly.
pub fn bumpy_mlp(rng: &mut RngStream, d: usize, hidden: usize, sharpness: f64) -> MlpModel {
    let w1 = weights(rng, hidden, d, Init::Scaled(sharpness));
    let b1 = (0..hidden).map(|_| sharpness * rng.standard_normal()).collect();
    let w2 = weights(rng, 1, hidden, Init::Scaled(1.0));
    let layers = vec![Layer::new(w1, b1, Activation::Softplus), Layer::unbiased(w2, Activation::Identity)];
    MlpModel::new(d, layers, 0).expect("generated dimensions chain")
}

/// Two-layer classifier-style network for the randomization sanity check.
pub fn classifier_mlp(rng: &mut RngStream, d: usize, hidden: usize, outputs: usize) -> MlpModel {
    let w1 = weights(rng, hidden, d, Init::Scaled(2.0));
    let b1 = (0..hidden).map(|_| 0.5 * rng.standard_normal()).collect();
    let w2 = weights(rng, outputs, hidden, Init::Scaled(1.0));
    let layers = vec![Layer::new(w1, b1, Activation::Softplus), Layer::unbiased(w2, Activation::Identity)];
    MlpModel::new(d, layers, 0).expect("generated dimensions chain")
}

/// `½ xᵀHx + wᵀx + c` with `H = (A + Aᵀ)/2`, `A` standard normal.
pub fn random_quadratic(rng: &mut RngStream, d: usize) -> QuadraticModel {
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect();
    let mut h = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            h.set(i, j, 0.5 * (a[i][j] + a[j][i]));
        }
    }
    let w = (0..d).map(|_| rng.standard_normal()).collect();
    QuadraticModel::new(h, w, rng.standard_normal()).expect("symmetric by construction")
}

pub fn random_input(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.standard_normal()).collect()
}

/// Inputs bounded away from zero in every coordinate.
pub fn nonzero_input(rng: &mut RngStream, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let v = 0.25 + rng.uniform();
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect()
}

/// Zero-bias softplus networks with `d ∈ 2..=max_dim` and 1 to 3 layers.
pub fn softplus_corpus(seed: u64, count: usize, max_dim: usize) -> Vec<CorpusEntry> {
    let root = RngStream::new(seed, 0x50f7);
    (0..count)
        .map(|k| {
            let mut rng = root.substream(k as u64);
            let d = 2 + rng.below(max_dim - 1);
            let depth = 1 + rng.below(3);
            let mut dims = vec![d];
            for _ in 1..depth {
                dims.push(2 + rng.below(6));
            }
            dims.push(1);
            let model = Model::Mlp(softplus_mlp(&mut rng, &dims, Init::Xavier));
            CorpusEntry { id: format!("softplus-{k}-{dims:?}"), x: random_input(&mut rng, d), model }
        })
        .collect()
}

/// Two-layer zero-bias softplus networks, `d ∈ 2..=max_dim`.
pub fn two_layer_corpus(seed: u64, count: usize, max_dim: usize) -> Vec<CorpusEntry> {
    let root = RngStream::new(seed, 0x2a1e);
    (0..count)
        .map(|k| {
            let mut rng = root.substream(k as u64);
            let d = 2 + rng.below(max_dim - 1);
            let hidden = 2 + rng.below(6);
            let model = Model::Mlp(softplus_mlp(&mut rng, &[d, hidden, 1], Init::Xavier));
            CorpusEntry { id: format!("two-layer-{k}"), x: random_input(&mut rng, d), model }
        })
        .collect()
}

pub fn quadratic_corpus(seed: u64, count: usize, max_dim: usize) -> Vec<CorpusEntry> {
    let root = RngStream::new(seed, 0x90ad);
    (0..count)
        .map(|k| {
            let mut rng = root.substream(k as u64);
            let d = 2 + rng.below(max_dim - 1);
            let model = Model::Quadratic(random_quadratic(&mut rng, d));
            CorpusEntry { id: format!("quadratic-{k}"), x: random_input(&mut rng, d), model }
        })
        .collect()
}

pub fn bumpy_corpus(seed: u64, count: usize, d: usize) -> Vec<CorpusEntry> {
    let root = RngStream::new(seed, 0xb0b);
    (0..count)
        .map(|k| {
            let mut rng = root.substream(k as u64);
            let model = Model::Mlp(bumpy_mlp(&mut rng, d, 32, 6.0));
            CorpusEntry { id: format!("bumpy-{k}"), x: random_input(&mut rng, d), model }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Predictor;

    #[test]
    fn corpora_are_reproducible_and_valid() {
        let a = softplus_corpus(3, 10, 8);
        assert_eq!(a, softplus_corpus(3, 10, 8));
        for e in &a {
            assert!(e.model.evaluate(&e.x).unwrap().is_finite());
            assert!(e.model.input_dim() <= 8);
        }
        assert_ne!(a, softplus_corpus(4, 10, 8));
        for e in quadratic_corpus(1, 5, 6).iter().chain(&two_layer_corpus(1, 5, 6)).chain(&bumpy_corpus(1, 3, 6)) {
            assert!(e.model.evaluate(&e.x).unwrap().is_finite());
        }
    }
}
