use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::numerics::{self, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(v),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(v),
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Dense layer; `weights[i][j]` multiplies input `j` into output `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Self {
        Self { weights, bias, activation }
    }

    /// Zero-bias layer.
    pub fn unbiased(weights: Vec<Vec<f64>>, activation: Activation) -> Self {
        let bias = vec![0.0; weights.len()];
        Self { weights, bias, activation }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| numerics::dot(row, input) + b)
            .collect()
    }
}

/// Fully connected network reduced to a scalar by `output_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    output_index: usize,
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(input_dim: usize, layers: Vec<Layer>, output_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an MLP needs at least one layer"));
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.outputs() == 0 {
                return Err(invalid(format!("layer {k}: empty weight matrix")));
            }
            for (i, row) in layer.weights.iter().enumerate() {
                if row.len() != width {
                    return Err(invalid(format!(
                        "layer {k}: row {i} has {} inputs, expected {width}",
                        row.len()
                    )));
                }
                if !numerics::all_finite(row) {
                    return Err(Error::NonFinite("layer weights"));
                }
            }
            if layer.bias.len() != layer.outputs() {
                return Err(invalid(format!(
                    "layer {k}: bias has {} entries, expected {}",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            if !numerics::all_finite(&layer.bias) {
                return Err(Error::NonFinite("layer bias"));
            }
            width = layer.outputs();
        }
        if output_index >= width {
            return Err(invalid(format!("output index {output_index} out of range for {width} outputs")));
        }
        Ok(Self { input_dim, output_index, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_index(&self) -> usize {
        self.output_index
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if k == last {
                let row = &layer.weights[self.output_index];
                let z = numerics::dot(row, &h) + layer.bias[self.output_index];
                return Ok(layer.activation.apply(z));
            }
            h = layer.pre_activation(&h).into_iter().map(|z| layer.activation.apply(z)).collect();
        }
        unreachable!("non-empty layer list")
    }

    /// Backpropagated gradient of the selected output.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers[..last] {
            let z = layer.pre_activation(&h);
            h = z.iter().map(|v| layer.activation.apply(*v)).collect();
            pre.push(z);
        }
        let out = &self.layers[last];
        let z_out = numerics::dot(&out.weights[self.output_index], &h) + out.bias[self.output_index];
        let scale = out.activation.derivative(z_out);
        let mut grad: Vec<f64> = out.weights[self.output_index].iter().map(|w| w * scale).collect();

        for k in (0..last).rev() {
            let layer = &self.layers[k];
            let delta: Vec<f64> = grad
                .iter()
                .zip(&pre[k])
                .map(|(g, z)| g * layer.activation.derivative(*z))
                .collect();
            let mut next = vec![0.0; layer.inputs()];
            for (row, d) in layer.weights.iter().zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// Copy with layer `layer_index` resampled i.i.d. `N(0, s²)`, where `s` is
    /// the empirical standard deviation of that layer's weights.
    pub fn randomize_layer(&self, layer_index: usize, rng: &RngStream) -> Result<MlpModel> {
        if layer_index >= self.layers.len() {
            return Err(invalid(format!(
                "layer index {layer_index} out of range for {} layers",
                self.layers.len()
            )));
        }
        let layer = &self.layers[layer_index];
        let all: Vec<f64> = layer.weights.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();

        let mut stream = rng.clone();
        let weights = layer
            .weights
            .iter()
            .map(|row| row.iter().map(|_| std * stream.standard_normal()).collect())
            .collect();
        let mut out = self.clone();
        out.layers[layer_index] = Layer { weights, bias: layer.bias.clone(), activation: layer.activation };
        Ok(out)
    }

    /// Sensitivity bound `∏ᵢ (‖Wᵢ‖₂² / 4) · radius` for zero-bias softplus networks.
    ///
    /// The last factor uses the selected output row, which is the weight
    /// matrix of the scalar function actually explained.
    pub fn softplus_sensitivity_bound(&self, radius: f64) -> Result<f64> {
        if !(radius >= 0.0) {
            return Err(invalid(format!("radius must be >= 0, got {radius}")));
        }
        let last = self.layers.len() - 1;
        let mut product = 1.0;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.activation != Activation::Softplus {
                return Err(Error::Hypothesis(format!("layer {k} is not softplus")));
            }
            let rows: Vec<Vec<f64>> = if k == last {
                if layer.bias[self.output_index] != 0.0 {
                    return Err(Error::Hypothesis(format!("layer {k} has a nonzero bias")));
                }
                vec![layer.weights[self.output_index].clone()]
            } else {
                if layer.bias.iter().any(|b| *b != 0.0) {
                    return Err(Error::Hypothesis(format!("layer {k} has a nonzero bias")));
                }
                layer.weights.clone()
            };
            let norm = numerics::spectral_norm(&rows);
            product *= norm * norm / 4.0;
        }
        Ok(product * radius)
    }
}
