use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::pb;
use tract_onnx::pb::tensor_shape_proto::dimension::Value as Dim;
use tract_onnx::pb::type_proto::Value as TypeValue;
use tract_onnx::prelude::*;

use super::{read_json, Capabilities, ClassWeights, Classifier, FeatureVector};
use crate::error::{shape, Error, Result};
use crate::types::{Image, ProbVector};

/// Names of the graph tensors the adapter reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnxConfig {
    pub model_path: PathBuf,
    pub input_name: String,
    pub prob_output_name: String,
    pub feature_tensor_name: Option<String>,
    /// Initializer holding the last-layer weights, shaped `[classes, features]`
    /// or `[features, classes]`.
    pub weight_tensor_name: Option<String>,
    /// Apply softmax to the probability output (for graphs that end in logits).
    #[serde(default)]
    pub apply_softmax: bool,
}

impl OnnxConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Runs an ONNX graph with tract. The input is fed as `[1, C, H, W]` `f32`.
pub struct OnnxClassifier {
    plan: TypedSimplePlan<TypedModel>,
    config: OnnxConfig,
    input_dims: (usize, usize, usize),
    n_classes: usize,
    feature_dim: usize,
    weights: Option<ClassWeights>,
}

impl std::fmt::Debug for OnnxClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxClassifier")
            .field("model_path", &self.config.model_path)
            .field("input_dims", &self.input_dims)
            .field("n_classes", &self.n_classes)
            .field("feature_dim", &self.feature_dim)
            .finish()
    }
}

fn backend(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("{context}: {e}"))
}

fn declared_input(graph: &pb::GraphProto, name: &str) -> Result<(usize, usize, usize)> {
    let info = graph
        .input
        .iter()
        .find(|i| i.name == name)
        .ok_or_else(|| backend("loading model", format!("no graph input named {name:?}")))?;
    let dims: Vec<Option<i64>> = match info.r#type.as_ref().and_then(|t| t.value.as_ref()) {
        Some(TypeValue::TensorType(t)) => t
            .shape
            .as_ref()
            .map(|s| {
                s.dim
                    .iter()
                    .map(|d| match d.value {
                        Some(Dim::DimValue(v)) => Some(v),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        _ => Vec::new(),
    };
    match dims.as_slice() {
        [_, Some(c), Some(h), Some(w)] if *c > 0 && *h > 0 && *w > 0 => Ok((*h as usize, *w as usize, *c as usize)),
        _ => Err(backend(
            "loading model",
            format!("input {name:?} must be declared as [N, C, H, W] with fixed C, H, W"),
        )),
    }
}

fn initializer_weights(graph: &pb::GraphProto, name: &str, dir: Option<&str>) -> Result<Vec<Vec<f64>>> {
    let proto = graph
        .initializer
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| backend("loading model", format!("no initializer named {name:?}")))?;
    let resolver = tract_onnx::data_resolver::MmapDataResolver;
    let tensor = tract_onnx::tensor::load_tensor(&resolver, proto, dir)
        .and_then(|t| t.cast_to::<f64>().map(|c| c.into_owned()))
        .map_err(|e| backend("reading weight tensor", e))?;
    let shape = tensor.shape().to_vec();
    let [rows, cols] = shape[..] else {
        return Err(backend(
            "reading weight tensor",
            format!("expected a matrix, got shape {shape:?}"),
        ));
    };
    let data = tensor
        .as_slice::<f64>()
        .map_err(|e| backend("reading weight tensor", e))?;
    Ok((0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect())
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..m[0].len()).map(|c| m.iter().map(|r| r[c]).collect()).collect()
}

impl OnnxClassifier {
    pub fn load(config: &OnnxConfig) -> Result<Self> {
        let onnx = tract_onnx::onnx();
        let proto = onnx
            .proto_model_for_path(&config.model_path)
            .map_err(|e| backend(&format!("reading {}", config.model_path.display()), e))?;
        let graph = proto
            .graph
            .as_ref()
            .ok_or_else(|| backend("loading model", "model has no graph"))?;
        let (h, w, c) = declared_input(graph, &config.input_name)?;
        let dir = config.model_path.parent().and_then(Path::to_str);
        let raw_weights = config
            .weight_tensor_name
            .as_deref()
            .map(|name| initializer_weights(graph, name, dir))
            .transpose()?;

        let mut outputs = vec![config.prob_output_name.clone()];
        outputs.extend(config.feature_tensor_name.clone());
        let model = onnx
            .model_for_proto_model(&proto)
            .map_err(|e| backend("parsing model", e))?;
        let input_ix = model
            .input_outlets()
            .map_err(|e| backend("parsing model", e))?
            .iter()
            .position(|o| model.node(o.node).name == config.input_name)
            .ok_or_else(|| backend("parsing model", format!("{:?} is not a model input", config.input_name)))?;
        let plan = model
            .with_input_fact(input_ix, f32::fact([1, c, h, w]).into())
            .and_then(|m| m.with_output_names(&outputs))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| backend("preparing model", e))?;

        let mut adapter = OnnxClassifier {
            plan,
            config: config.clone(),
            input_dims: (h, w, c),
            n_classes: 0,
            feature_dim: 0,
            weights: None,
        };
        let probe = Image::filled(h, w, &crate::types::Fill::grey())?;
        let out = adapter.run(&probe)?;
        adapter.n_classes = out[0].len();
        adapter.feature_dim = out.get(1).map_or(0, Vec::len);
        if adapter.n_classes < 2 {
            return Err(backend(
                "loading model",
                "probability output has fewer than two classes",
            ));
        }
        if let Some(m) = raw_weights {
            let (n, d) = (adapter.n_classes, adapter.feature_dim);
            let rows = if m.len() == n && m[0].len() == d {
                m
            } else if m.len() == d && m[0].len() == n {
                transpose(&m)
            } else {
                return Err(backend(
                    "reading weight tensor",
                    format!("shape {}x{} fits neither {n}x{d} nor {d}x{n}", m.len(), m[0].len()),
                ));
            };
            adapter.weights = ClassWeights::new(rows).ok();
        }
        Ok(adapter)
    }

    pub fn config(&self) -> &OnnxConfig {
        &self.config
    }

    fn run(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        let (h, w, c) = self.input_dims;
        if image.dims() != (h, w, c) {
            return Err(shape(format!(
                "model expects {h}x{w}x{c}, image is {}x{}x{}",
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        let src = image.data();
        let mut chw = vec![0f32; src.len()];
        for (i, px) in src.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                chw[ch * h * w + i] = v;
            }
        }
        let input = Tensor::from_shape(&[1, c, h, w], &chw).map_err(|e| backend("building input", e))?;
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| backend("running model", e))?;
        outputs
            .iter()
            .map(|t| {
                let t = t.cast_to::<f64>().map_err(|e| backend("reading output", e))?;
                Ok(t.as_slice::<f64>().map_err(|e| backend("reading output", e))?.to_vec())
            })
            .collect()
    }
}

impl Classifier for OnnxClassifier {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_features: self.feature_dim > 0,
            has_weights: self.weights.is_some(),
        }
    }

    fn predict(&self, image: &Image) -> Result<ProbVector> {
        let out = self.run(image)?.swap_remove(0);
        if self.config.apply_softmax {
            ProbVector::softmax(&out)
        } else {
            ProbVector::new(out).map_err(|e| backend("probability output", e))
        }
    }

    fn penultimate_features(&self, image: &Image) -> Result<FeatureVector> {
        if self.feature_dim == 0 {
            return Err(Error::Unsupported("penultimate features"));
        }
        FeatureVector::new(self.run(image)?.swap_remove(1))
    }

    fn class_weights(&self) -> Result<ClassWeights> {
        self.weights.clone().ok_or(Error::Unsupported("class weights"))
    }
}
