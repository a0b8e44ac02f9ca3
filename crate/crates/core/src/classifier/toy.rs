use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_json, Capabilities, ClassWeights, Classifier, FeatureVector};
use crate::error::{shape, validation, Error, Result};
use crate::types::{Image, ProbVector};

/// Fixed feature extractor feeding the toy linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// Raw image buffer in row-major, channel-last order.
    Flatten,
    /// Average pooling over `k×k` blocks per channel; edge blocks average
    /// whatever pixels they cover. Output order is (block row, block col, channel).
    Downsample(usize),
}

impl FeatureMap {
    pub fn output_len(&self, image: &Image) -> usize {
        let (h, w, c) = image.dims();
        match *self {
            FeatureMap::Flatten => h * w * c,
            FeatureMap::Downsample(k) => h.div_ceil(k) * w.div_ceil(k) * c,
        }
    }

    pub fn apply(&self, image: &Image) -> Vec<f64> {
        match *self {
            FeatureMap::Flatten => image.data().iter().map(|&v| f64::from(v)).collect(),
            FeatureMap::Downsample(k) => {
                let (h, w, c) = image.dims();
                let (bh, bw) = (h.div_ceil(k), w.div_ceil(k));
                let mut out = vec![0.0; bh * bw * c];
                let mut counts = vec![0usize; bh * bw];
                for y in 0..h {
                    for x in 0..w {
                        let b = (y / k) * bw + x / k;
                        counts[b] += 1;
                        for ch in 0..c {
                            out[b * c + ch] += f64::from(image.get(y, x, ch));
                        }
                    }
                }
                for (b, &n) in counts.iter().enumerate() {
                    for ch in 0..c {
                        out[b * c + ch] /= n as f64;
                    }
                }
                out
            }
        }
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "flatten" {
            return Ok(FeatureMap::Flatten);
        }
        if let Some(k) = s.strip_prefix("downsample:") {
            let k: usize = k
                .parse()
                .map_err(|_| validation(format!("bad downsample factor in {s:?}")))?;
            if k == 0 {
                return Err(validation("downsample factor must be positive"));
            }
            return Ok(FeatureMap::Downsample(k));
        }
        Err(validation(format!(
            "unknown feature map {s:?}; expected \"flatten\" or \"downsample:k\""
        )))
    }
}

impl std::fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMap::Flatten => write!(f, "flatten"),
            FeatureMap::Downsample(k) => write!(f, "downsample:{k}"),
        }
    }
}

/// On-disk toy configuration: `{n_classes, feature, weights, bias}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_classes: usize,
    pub feature: String,
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

/// Linear softmax classifier over a fixed feature map. The feature map output
/// doubles as the penultimate features and the weight matrix as the class
/// weights.
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    feature: FeatureMap,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    has_weights: bool,
}

impl ToyClassifier {
    pub fn new(feature: FeatureMap, weights: Vec<Vec<f64>>, bias: Option<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        if n < 2 {
            return Err(validation(format!("toy classifier needs at least 2 classes, got {n}")));
        }
        let dim = weights[0].len();
        if dim == 0 {
            return Err(validation("toy weight rows are empty"));
        }
        if weights.iter().any(|r| r.len() != dim) {
            return Err(validation("toy weight rows differ in length"));
        }
        if weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(validation("toy weights must be finite"));
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; n]);
        if bias.len() != n || bias.iter().any(|b| !b.is_finite()) {
            return Err(validation(format!("toy bias must have {n} finite entries")));
        }
        let has_weights = weights.iter().all(|r| r.iter().any(|&v| v != 0.0));
        Ok(ToyClassifier {
            feature,
            weights,
            bias,
            has_weights,
        })
    }

    pub fn from_config(cfg: ToyConfig) -> Result<Self> {
        if cfg.n_classes != cfg.weights.len() {
            return Err(validation(format!(
                "n_classes is {} but weights has {} rows",
                cfg.n_classes,
                cfg.weights.len()
            )));
        }
        ToyClassifier::new(cfg.feature.parse()?, cfg.weights, cfg.bias)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        ToyClassifier::from_config(read_json(path)?)
    }

    pub fn config(&self) -> ToyConfig {
        ToyConfig {
            n_classes: self.weights.len(),
            feature: self.feature.to_string(),
            weights: self.weights.clone(),
            bias: Some(self.bias.clone()),
        }
    }

    fn features_checked(&self, image: &Image) -> Result<Vec<f64>> {
        let len = self.feature.output_len(image);
        if len != self.feature_dim() {
            return Err(shape(format!(
                "image {:?} gives {len} features under {}, classifier expects {}",
                image.dims(),
                self.feature,
                self.feature_dim()
            )));
        }
        Ok(self.feature.apply(image))
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        let f = self.features_checked(image)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(&f).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }
}

impl Classifier for ToyClassifier {
    fn n_classes(&self) -> usize {
        self.weights.len()
    }

    fn feature_dim(&self) -> usize {
        self.weights[0].len()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_features: true,
            has_weights: self.has_weights,
        }
    }

    fn predict(&self, image: &Image) -> Result<ProbVector> {
        ProbVector::softmax(&self.logits(image)?)
    }

    fn penultimate_features(&self, image: &Image) -> Result<FeatureVector> {
        FeatureVector::new(self.features_checked(image)?)
    }

    fn class_weights(&self) -> Result<ClassWeights> {
        if !self.has_weights {
            return Err(Error::Unsupported("class weights (a weight row is all zeros)"));
        }
        ClassWeights::new(self.weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, data: Vec<f32>) -> Image {
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let toy = ToyClassifier::new(FeatureMap::Flatten, vec![vec![0.0; 4]; 3], None).unwrap();
        let p = toy.predict(&img(2, 2, vec![0.1, 0.9, 0.3, 0.4])).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(!toy.capabilities().has_weights);
        assert!(matches!(toy.class_weights(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn equal_and_unit_logits() {
        let toy = ToyClassifier::new(FeatureMap::Flatten, vec![vec![1.0], vec![1.0]], None).unwrap();
        assert_eq!(toy.predict(&img(1, 1, vec![0.7])).unwrap().as_slice(), &[0.5, 0.5]);

        let toy = ToyClassifier::new(FeatureMap::Flatten, vec![vec![1.0], vec![0.0]], None).unwrap();
        let p = toy.predict(&img(1, 1, vec![1.0])).unwrap();
        let e = std::f64::consts::E;
        assert!((p.as_slice()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn flatten_features_are_the_image() {
        let toy = ToyClassifier::new(FeatureMap::Flatten, vec![vec![1.0; 4]; 2], None).unwrap();
        let f = toy.penultimate_features(&img(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(f.values(), &[1.0, 0.0, 0.0, 1.0]);
        let grey = toy.penultimate_features(&img(2, 2, vec![0.5; 4])).unwrap();
        assert_eq!(grey.values(), &[0.5; 4]);
        assert!(matches!(
            toy.penultimate_features(&img(2, 2, vec![0.0; 4])),
            Err(Error::ZeroFeature)
        ));
    }

    #[test]
    fn downsample_pools_blocks() {
        let fm: FeatureMap = "downsample:2".parse().unwrap();
        let image = img(3, 3, vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.5, 0.2, 0.4, 1.0]);
        assert_eq!(fm.output_len(&image), 4);
        let f = fm.apply(&image);
        assert!((f[0] - 0.5).abs() < 1e-7);
        assert!((f[1] - 0.5).abs() < 1e-7);
        assert!((f[2] - 0.3).abs() < 1e-7);
        assert!((f[3] - 1.0).abs() < 1e-7);
        assert!("downsample:0".parse::<FeatureMap>().is_err());
        assert!("pool".parse::<FeatureMap>().is_err());
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let w = vec![vec![0.1, -0.2], vec![1e-300, 3.5]];
        let toy = ToyClassifier::new(FeatureMap::Flatten, w.clone(), None).unwrap();
        assert_eq!(toy.class_weights().unwrap().rows(), w.as_slice());
        let id = ToyClassifier::new(
            FeatureMap::Flatten,
            ClassWeights::identity(3).unwrap().rows().to_vec(),
            None,
        )
        .unwrap();
        assert_eq!(id.class_weights().unwrap().rows()[2], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let toy = ToyClassifier::new(FeatureMap::Flatten, vec![vec![1.0; 4]; 2], None).unwrap();
        assert!(matches!(toy.predict(&img(1, 3, vec![0.0; 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"n_classes": 2, "feature": "downsample:4", "weights": [[1, 2], [3, 4]], "bias": [0.5, -0.5]}"#;
        let cfg: ToyConfig = serde_json::from_str(text).unwrap();
        let toy = ToyClassifier::from_config(cfg.clone()).unwrap();
        assert_eq!(toy.config(), cfg);
        let bad = ToyConfig { n_classes: 3, ..cfg };
        assert!(ToyClassifier::from_config(bad).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let w = vec![vec![0.3, -1.2, 0.8, 0.1], vec![-0.4, 0.9, 0.2, 0.0]];
        let a = ToyClassifier::new(FeatureMap::Flatten, w.clone(), Some(vec![0.0, 0.5])).unwrap();
        let b = ToyClassifier::new(FeatureMap::Flatten, w, Some(vec![7.25, 7.75])).unwrap();
        let image = img(2, 2, vec![0.2, 0.4, 0.6, 0.8]);
        let (pa, pb) = (a.predict(&image).unwrap(), b.predict(&image).unwrap());
        for (x, y) in pa.as_slice().iter().zip(pb.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.predict(&image).unwrap(), pa);
    }
}
