use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{digest_hex, image_digest, Capabilities, ClassWeights, Classifier, FeatureVector};
use crate::error::{validation, Error, Result};
use crate::types::{Image, ProbVector};

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub digest: String,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct WeightsRecord {
    weights: Vec<Vec<f64>>,
}

/// Serves precomputed outputs keyed by [`image_digest`].
///
/// The file is newline-delimited JSON: records `{digest, probs, features}`
/// plus at most one `{weights}` record.
#[derive(Debug, Clone, Default)]
pub struct ReplayClassifier {
    records: HashMap<u64, (ProbVector, Option<FeatureVector>)>,
    weights: Option<ClassWeights>,
    n_classes: usize,
    feature_dim: usize,
    all_have_features: bool,
}

impl ReplayClassifier {
    pub fn new(records: Vec<ReplayRecord>, weights: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let mut out = ReplayClassifier {
            all_have_features: true,
            ..Default::default()
        };
        for (line, rec) in records.into_iter().enumerate() {
            out.insert(rec).map_err(|e| e.at(format!("replay record {line}")))?;
        }
        if out.records.is_empty() {
            return Err(validation("replay file has no prediction records"));
        }
        if let Some(w) = weights {
            let w = ClassWeights::new(w)?;
            if w.n_classes() != out.n_classes {
                return Err(validation(format!(
                    "replay weights have {} rows, records have {} classes",
                    w.n_classes(),
                    out.n_classes
                )));
            }
            if out.feature_dim != 0 && w.dim() != out.feature_dim {
                return Err(validation(format!(
                    "replay weights have {} columns, features have length {}",
                    w.dim(),
                    out.feature_dim
                )));
            }
            out.feature_dim = w.dim();
            out.weights = Some(w);
        }
        if out.n_classes < 2 {
            return Err(validation("replay records need at least 2 classes"));
        }
        Ok(out)
    }

    fn insert(&mut self, rec: ReplayRecord) -> Result<()> {
        let digest =
            u64::from_str_radix(&rec.digest, 16).map_err(|_| validation(format!("bad digest {:?}", rec.digest)))?;
        let probs = ProbVector::new(rec.probs)?;
        if self.n_classes == 0 {
            self.n_classes = probs.len();
        } else if probs.len() != self.n_classes {
            return Err(validation(format!(
                "record has {} classes, expected {}",
                probs.len(),
                self.n_classes
            )));
        }
        let features = match rec.features {
            Some(f) => {
                let f = FeatureVector::new(f)?;
                if self.feature_dim == 0 {
                    self.feature_dim = f.len();
                } else if f.len() != self.feature_dim {
                    return Err(validation(format!(
                        "features have length {}, expected {}",
                        f.len(),
                        self.feature_dim
                    )));
                }
                Some(f)
            }
            None => {
                self.all_have_features = false;
                None
            }
        };
        if self.records.insert(digest, (probs, features)).is_some() {
            return Err(validation(format!("duplicate digest {}", rec.digest)));
        }
        Ok(())
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        let mut weights = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Backend(format!("reading replay line {n}: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| validation(format!("replay line {}: {e}", n + 1)))?;
            if value.get("weights").is_some() {
                if weights.is_some() {
                    return Err(validation("replay file has more than one weights record"));
                }
                let w: WeightsRecord =
                    serde_json::from_value(value).map_err(|e| validation(format!("replay line {}: {e}", n + 1)))?;
                weights = Some(w.weights);
            } else {
                records.push(
                    serde_json::from_value(value).map_err(|e| validation(format!("replay line {}: {e}", n + 1)))?,
                );
            }
        }
        ReplayClassifier::new(records, weights)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ReplayClassifier::from_reader(BufReader::new(file))
    }

    /// Writes records (sorted by digest) followed by the weights record.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut keys: Vec<_> = self.records.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let (probs, features) = &self.records[&k];
            let rec = ReplayRecord {
                digest: digest_hex(k),
                probs: probs.as_slice().to_vec(),
                features: features.as_ref().map(|f| f.values().to_vec()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        if let Some(w) = &self.weights {
            serde_json::to_writer(
                &mut out,
                &WeightsRecord {
                    weights: w.rows().to_vec(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Record for an image, keyed by its digest.
    pub fn record_for(image: &Image, probs: &ProbVector, features: Option<&FeatureVector>) -> ReplayRecord {
        ReplayRecord {
            digest: digest_hex(image_digest(image)),
            probs: probs.as_slice().to_vec(),
            features: features.map(|f| f.values().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn lookup(&self, image: &Image) -> Result<&(ProbVector, Option<FeatureVector>)> {
        let digest = image_digest(image);
        self.records
            .get(&digest)
            .ok_or_else(|| Error::Backend(format!("no replay record for digest {}", digest_hex(digest))))
    }
}

impl Classifier for ReplayClassifier {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim.max(1)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_features: self.all_have_features,
            has_weights: self.weights.is_some(),
        }
    }

    fn predict(&self, image: &Image) -> Result<ProbVector> {
        Ok(self.lookup(image)?.0.clone())
    }

    fn penultimate_features(&self, image: &Image) -> Result<FeatureVector> {
        self.lookup(image)?
            .1
            .clone()
            .ok_or(Error::Unsupported("penultimate features (record has none)"))
    }

    fn class_weights(&self) -> Result<ClassWeights> {
        self.weights
            .clone()
            .ok_or(Error::Unsupported("class weights (no weights record)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images() -> Vec<Image> {
        (0..3)
            .map(|i| Image::new(1, 2, 1, vec![i as f32 / 4.0, 0.5]).unwrap())
            .collect()
    }

    fn classifier() -> ReplayClassifier {
        let recs = images()
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let p = 0.1 * (i as f64 + 1.0);
                ReplayClassifier::record_for(
                    img,
                    &ProbVector::new(vec![p, 1.0 - p]).unwrap(),
                    Some(&FeatureVector::new(vec![i as f64 + 0.125, -0.3]).unwrap()),
                )
            })
            .collect();
        ReplayClassifier::new(recs, Some(vec![vec![1.0, 0.0], vec![0.5, 0.5]])).unwrap()
    }

    #[test]
    fn lookup_is_bit_exact() {
        let c = classifier();
        let imgs = images();
        assert_eq!(c.penultimate_features(&imgs[2]).unwrap().values(), &[2.125, -0.3]);
        assert_eq!(c.predict(&imgs[0]).unwrap().as_slice(), &[0.1, 0.9]);
        assert_eq!(c.class_weights().unwrap().rows()[1], vec![0.5, 0.5]);
        assert!(c.capabilities().ood_capable());
    }

    #[test]
    fn missing_record_is_backend_error() {
        let c = classifier();
        let other = Image::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(c.predict(&other), Err(Error::Backend(_))));
    }

    #[test]
    fn write_and_reload() {
        let c = classifier();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("{\"weights\""));
        let back = ReplayClassifier::from_reader(buf.as_slice()).unwrap();
        for img in images() {
            assert_eq!(back.predict(&img).unwrap(), c.predict(&img).unwrap());
            assert_eq!(
                back.penultimate_features(&img).unwrap(),
                c.penultimate_features(&img).unwrap()
            );
        }
    }

    #[test]
    fn rejects_inconsistent_files() {
        let dup = "{\"digest\":\"00ff\",\"probs\":[0.5,0.5]}\n{\"digest\":\"00ff\",\"probs\":[0.5,0.5]}\n";
        assert!(ReplayClassifier::from_reader(dup.as_bytes()).is_err());
        let classes = "{\"digest\":\"01\",\"probs\":[0.5,0.5]}\n{\"digest\":\"02\",\"probs\":[0.2,0.2,0.6]}\n";
        assert!(ReplayClassifier::from_reader(classes.as_bytes()).is_err());
        let bad_w = "{\"digest\":\"01\",\"probs\":[0.5,0.5],\"features\":[1,2]}\n{\"weights\":[[1,0,0],[0,1,0]]}\n";
        assert!(ReplayClassifier::from_reader(bad_w.as_bytes()).is_err());
        let no_features = "{\"digest\":\"01\",\"probs\":[0.5,0.5]}\n";
        let c = ReplayClassifier::from_reader(no_features.as_bytes()).unwrap();
        assert!(!c.capabilities().has_features);
        assert!(matches!(c.class_weights(), Err(Error::Unsupported(_))));
    }
}
