//! JSON model files.
//!
//! ```text
//! {"type": "mlp", "input_dim": d, "output_index": k,
//!  "layers": [{"weights": [[..]], "bias": [..], "activation": "softplus"}]}
//! {"type": "quadratic", "input_dim": d, "H": [[..]], "w": [..], "c": r}
//! {"type": "toy", "input_dim": 2}
//! ```

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Activation, Layer, MlpModel, Model, QuadraticModel, ToyFunction};
use crate::error::{Error, Result};
use crate::numerics::SquareMatrix;

type Parse<T> = std::result::Result<T, String>;

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ModelFile { path: path.display().to_string(), message: e.to_string() })?;
    model_from_json(&text).map_err(|e| match e {
        Error::ModelFile { message, .. } => Error::ModelFile { path: path.display().to_string(), message },
        other => other,
    })
}

/// Writes through a sibling temporary file and a rename.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_json(model);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn model_to_json(model: &Model) -> String {
    let value = match model {
        Model::Mlp(m) => json!({
            "type": "mlp",
            "input_dim": m.input_dim(),
            "output_index": m.output_index(),
            "layers": m.layers(),
        }),
        Model::Quadratic(q) => json!({
            "type": "quadratic",
            "input_dim": q.dim(),
            "H": q.hessian().to_rows(),
            "w": q.linear_term(),
            "c": q.offset(),
        }),
        Model::Toy(_) => json!({"type": "toy", "input_dim": 2}),
    };
    serde_json::to_string_pretty(&value).expect("model values serialize")
}

pub fn model_from_json(text: &str) -> Result<Model> {
    let file_error = |message: String| Error::ModelFile { path: "<input>".into(), message };
    let value: Value = serde_json::from_str(text).map_err(|e| file_error(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| file_error("top level must be an object".into()))?;
    let kind = obj.get("type").and_then(Value::as_str).ok_or_else(|| file_error("missing \"type\" string".into()))?;
    match kind {
        "mlp" => {
            let (input_dim, output_index, layers) = parse_mlp(obj).map_err(file_error)?;
            MlpModel::new(input_dim, layers, output_index).map(Model::Mlp).map_err(|e| file_error(e.to_string()))
        }
        "quadratic" => {
            let (h, w, c) = parse_quadratic(obj).map_err(file_error)?;
            let h = SquareMatrix::from_rows(&h).map_err(|e| file_error(format!("H: {e}")))?;
            QuadraticModel::new(h, w, c).map(Model::Quadratic).map_err(|e| file_error(e.to_string()))
        }
        "toy" => {
            if let Some(d) = obj.get("input_dim") {
                if d.as_u64() != Some(2) {
                    return Err(file_error("toy model has input_dim 2".into()));
                }
            }
            Ok(Model::Toy(ToyFunction))
        }
        other => Err(file_error(format!("unknown model type {other:?}"))),
    }
}

fn parse_mlp(obj: &Map<String, Value>) -> Parse<(usize, usize, Vec<Layer>)> {
    let input_dim = get_usize(obj, "input_dim")?;
    let output_index = match obj.get("output_index") {
        None => 0,
        Some(_) => get_usize(obj, "output_index")?,
    };
    let layers = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or("missing \"layers\" array")?
        .iter()
        .enumerate()
        .map(|(k, v)| parse_layer(v).map_err(|e| format!("layer {k}: {e}")))
        .collect::<Parse<Vec<_>>>()?;
    Ok((input_dim, output_index, layers))
}

fn parse_layer(value: &Value) -> Parse<Layer> {
    let obj = value.as_object().ok_or("not an object")?;
    let weights = matrix(obj.get("weights").ok_or("missing weights array")?).map_err(|e| format!("weights: {e}"))?;
    let bias = vector(obj.get("bias").ok_or("missing bias array")?).map_err(|e| format!("bias: {e}"))?;
    let activation = match obj.get("activation") {
        None => Activation::Softplus,
        Some(a) => serde_json::from_value(a.clone()).map_err(|_| format!("unknown activation {a}"))?,
    };
    Ok(Layer::new(weights, bias, activation))
}

fn parse_quadratic(obj: &Map<String, Value>) -> Parse<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    let h = matrix(obj.get("H").ok_or("missing \"H\" matrix")?).map_err(|e| format!("H: {e}"))?;
    let d = h.len();
    let w = match obj.get("w") {
        None => vec![0.0; d],
        Some(v) => vector(v).map_err(|e| format!("w: {e}"))?,
    };
    let c = match obj.get("c") {
        None => 0.0,
        Some(v) => v.as_f64().ok_or("c: not a number")?,
    };
    if let Some(dv) = obj.get("input_dim") {
        let declared = dv.as_u64().ok_or("input_dim: not a non-negative integer")? as usize;
        if declared != d || w.len() != d {
            return Err(format!("input_dim {declared} but H is {d}x{d} and w has {} entries", w.len()));
        }
    }
    Ok((h, w, c))
}

fn get_usize(obj: &Map<String, Value>, key: &str) -> Parse<usize> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| format!("missing or invalid \"{key}\""))
}

fn vector(value: &Value) -> Parse<Vec<f64>> {
    value
        .as_array()
        .ok_or("expected an array of numbers")?
        .iter()
        .enumerate()
        .map(|(i, v)| v.as_f64().ok_or_else(|| format!("entry {i} is not a number")))
        .collect()
}

fn matrix(value: &Value) -> Parse<Vec<Vec<f64>>> {
    value
        .as_array()
        .ok_or("expected an array of rows")?
        .iter()
        .enumerate()
        .map(|(i, row)| vector(row).map_err(|e| format!("row {i}: {e}")))
        .collect()
}
