//! Black-box access to the model under explanation.
//!
//! A [`Classifier`] yields class probabilities and, when the adapter can
//! expose them, penultimate-layer features and last-layer class weights for
//! the inlier score. Three adapters ship with the crate: [`ToyClassifier`]
//! (linear softmax over a fixed feature map), [`ReplayClassifier`]
//! (precomputed outputs keyed by image digest) and, with the `onnx` feature,
//! [`OnnxClassifier`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::types::{Image, ProbVector};

#[cfg(feature = "onnx")]
mod onnx;
mod replay;
mod toy;

#[cfg(feature = "onnx")]
pub use onnx::{OnnxClassifier, OnnxConfig};
pub use replay::{ReplayClassifier, ReplayRecord};
pub use toy::{FeatureMap, ToyClassifier, ToyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_features: bool,
    pub has_weights: bool,
}

impl Capabilities {
    pub fn ood_capable(&self) -> bool {
        self.has_features && self.has_weights
    }
}

/// A model that can be queried on images.
///
/// Implementations must be deterministic: the same image always yields the
/// same probabilities and features, bit for bit.
pub trait Classifier: Send + Sync + fmt::Debug {
    fn n_classes(&self) -> usize;

    /// Length of the penultimate feature vector.
    fn feature_dim(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    fn predict(&self, image: &Image) -> Result<ProbVector>;

    fn penultimate_features(&self, _image: &Image) -> Result<FeatureVector> {
        Err(Error::Unsupported("penultimate features"))
    }

    fn class_weights(&self) -> Result<ClassWeights> {
        Err(Error::Unsupported("class weights"))
    }

    /// Batched prediction; must agree elementwise with [`Classifier::predict`].
    fn predict_batch(&self, images: &[Image]) -> Result<Vec<ProbVector>> {
        images
            .iter()
            .enumerate()
            .map(|(i, img)| self.predict(img).map_err(|e| e.at(format!("batch item {i}"))))
            .collect()
    }
}

pub type ClassifierHandle = Arc<dyn Classifier>;

/// Penultimate-layer activations. Never all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(validation("feature vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("feature vector contains non-finite values".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroFeature);
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

/// Last-layer weight rows, one per class, each with positive norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    rows: Vec<Vec<f64>>,
}

impl ClassWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(dim) = rows.first().map(Vec::len) else {
            return Err(validation("class weight matrix has no rows"));
        };
        if dim == 0 {
            return Err(validation("class weight rows are empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(validation(format!(
                    "class weight row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(validation(format!("class weight row {i} is not finite")));
            }
            if l2_norm(row) <= 0.0 {
                return Err(validation(format!("class weight row {i} has zero norm")));
            }
        }
        Ok(ClassWeights { rows })
    }

    /// Rows of the identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        ClassWeights::new(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 64-bit FNV-1a over the little-endian `f32` bytes of the image buffer.
pub fn image_digest(image: &Image) -> u64 {
    use std::hash::Hasher;
    let mut hasher = fnv::FnvHasher::default();
    for v in image.data() {
        hasher.write(&v.to_le_bytes());
    }
    hasher.finish()
}

pub fn digest_hex(digest: u64) -> String {
    format!("{digest:016x}")
}

/// Convenience check used by explainers before touching the OoD path.
pub fn require_ood(handle: &dyn Classifier) -> Result<()> {
    let caps = handle.capabilities();
    if !caps.has_features {
        return Err(Error::Unsupported("penultimate features"));
    }
    if !caps.has_weights {
        return Err(Error::Unsupported("class weights"));
    }
    Ok(())
}

/// Adapter selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    /// Inline toy configuration.
    Toy(ToyConfig),
    /// Toy configuration stored in a separate JSON file.
    ToyFile {
        path: PathBuf,
    },
    Replay {
        path: PathBuf,
    },
    #[cfg(feature = "onnx")]
    Onnx(OnnxConfig),
    /// ONNX adapter configuration stored in a separate JSON file.
    #[cfg(feature = "onnx")]
    OnnxFile {
        path: PathBuf,
    },
}

impl AdapterConfig {
    /// Loads the adapter. Relative paths resolve against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<ClassifierHandle> {
        let resolve = |p: &Path| {
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p.to_path_buf()
            }
        };
        Ok(match self {
            AdapterConfig::Toy(cfg) => Arc::new(ToyClassifier::from_config(cfg.clone())?),
            AdapterConfig::ToyFile { path } => Arc::new(ToyClassifier::from_path(&resolve(path))?),
            AdapterConfig::Replay { path } => Arc::new(ReplayClassifier::from_path(&resolve(path))?),
            #[cfg(feature = "onnx")]
            AdapterConfig::Onnx(cfg) => {
                let mut cfg = cfg.clone();
                cfg.model_path = resolve(&cfg.model_path);
                Arc::new(OnnxClassifier::load(&cfg)?)
            }
            #[cfg(feature = "onnx")]
            AdapterConfig::OnnxFile { path } => {
                let path = resolve(path);
                let mut cfg = OnnxConfig::from_path(&path)?;
                let dir = path.parent().unwrap_or(base_dir);
                if cfg.model_path.is_relative() {
                    cfg.model_path = dir.join(&cfg.model_path);
                }
                Arc::new(OnnxClassifier::load(&cfg)?)
            }
        })
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| match e.classify() {
        // Well-formed JSON with the wrong fields or values.
        serde_json::error::Category::Data => validation(format!("{}: {e}", path.display())),
        _ => Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_fnv1a_over_le_f32() {
        // Empty-input FNV-1a offset basis, then one known vector.
        use std::hash::Hasher;
        let h = fnv::FnvHasher::default();
        assert_eq!(h.finish(), 0xcbf29ce484222325);

        let img = Image::new(1, 1, 1, vec![0.0]).unwrap();
        // FNV-1a of four zero bytes.
        let mut expected: u64 = 0xcbf29ce484222325;
        for _ in 0..4 {
            expected ^= 0;
            expected = expected.wrapping_mul(0x100000001b3);
        }
        assert_eq!(image_digest(&img), expected);
        assert_eq!(digest_hex(expected).len(), 16);
    }

    #[test]
    fn feature_vector_rules() {
        assert!(matches!(FeatureVector::new(vec![0.0, 0.0]), Err(Error::ZeroFeature)));
        assert!(FeatureVector::new(vec![f64::NAN]).is_err());
        assert_eq!(FeatureVector::new(vec![3.0, 4.0]).unwrap().norm(), 5.0);
    }

    #[test]
    fn class_weight_rules() {
        assert!(ClassWeights::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(ClassWeights::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let id = ClassWeights::identity(3).unwrap();
        assert_eq!(id.rows()[1], vec![0.0, 1.0, 0.0]);
        assert_eq!((id.n_classes(), id.dim()), (3, 3));
    }
}
