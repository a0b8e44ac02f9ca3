//! Perturbation explainers and their inlier-corrected variants.
//!
//! Every explainer follows the same loop: build a set of masks, classify the
//! masked images, and aggregate. The corrected ("plus") variants additionally
//! weight each perturbed image by its inlier score. With all inlier scores
//! equal to one the plus variants reproduce their baselines exactly.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{digest_hex, require_ood, ClassWeights, Classifier, ClassifierHandle};
use crate::error::{validation, Error, Result};
use crate::masking::{LimeParams, OcclusionParams, RiseParams};
use crate::ood::{calibrate, inlier_score, max_similarity, InlierCalibration};
use crate::types::{apply_mask, Fill, Image, Mask, MaskSemantics, SaliencyMap, SaliencyMeta};

mod lime;
mod occlusion;
pub mod ridge;
mod rise;

pub use lime::{explain_lime, explain_lime_plus, fit_lime, LimeSettings, SegmentAttribution};
pub use occlusion::{aggregate_occlusion, explain_occlusion, explain_occlusion_plus, OcclusionPlusMode};
pub use rise::{aggregate_rise, explain_rise, explain_rise_plus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExplainerKind {
    Rise,
    RisePlus,
    Occlusion,
    OcclusionPlus,
    Lime,
    LimePlus,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 6] = [
        ExplainerKind::Rise,
        ExplainerKind::RisePlus,
        ExplainerKind::Occlusion,
        ExplainerKind::OcclusionPlus,
        ExplainerKind::Lime,
        ExplainerKind::LimePlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::Rise => "rise",
            ExplainerKind::RisePlus => "rise+",
            ExplainerKind::Occlusion => "occlusion",
            ExplainerKind::OcclusionPlus => "occlusion+",
            ExplainerKind::Lime => "lime",
            ExplainerKind::LimePlus => "lime+",
        }
    }

    /// Whether the explainer consumes inlier scores.
    pub fn uses_ood(self) -> bool {
        matches!(
            self,
            ExplainerKind::RisePlus | ExplainerKind::OcclusionPlus | ExplainerKind::LimePlus
        )
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExplainerKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| validation(format!("unknown explainer {s:?}")))
    }
}

impl TryFrom<String> for ExplainerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ExplainerKind> for String {
    fn from(k: ExplainerKind) -> Self {
        k.name().to_string()
    }
}

/// Which class to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    /// The model's top prediction on the unperturbed image.
    #[default]
    PredictedArgmax,
    Index(usize),
}

/// Mask family plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    Rise(RiseParams),
    Occlusion(OcclusionParams),
    Lime(LimeParams),
}

impl MaskSpec {
    /// FNV-1a digest of the spec's JSON form plus the image dimensions.
    pub fn digest(&self, height: usize, width: usize) -> String {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write(serde_json::to_string(self).expect("mask spec serializes").as_bytes());
        h.write(&(height as u64).to_le_bytes());
        h.write(&(width as u64).to_le_bytes());
        digest_hex(h.finish())
    }
}

/// Everything needed to explain one image.
#[derive(Debug, Clone)]
pub struct ExplainRequest {
    pub image: Image,
    /// Supplies `p(C_i | P_j)`.
    pub model: ClassifierHandle,
    /// Supplies features and class weights for inlier scores; defaults to `model`.
    pub ood_model: Option<ClassifierHandle>,
    pub target: TargetClass,
    pub masks: MaskSpec,
    pub fill: Fill,
    pub seed: u64,
    pub lime: LimeSettings,
    pub occlusion_plus: OcclusionPlusMode,
}

impl ExplainRequest {
    pub fn new(image: Image, model: ClassifierHandle, masks: MaskSpec) -> Self {
        ExplainRequest {
            image,
            model,
            ood_model: None,
            target: TargetClass::PredictedArgmax,
            masks,
            fill: Fill::grey(),
            seed: 0,
            lime: LimeSettings::default(),
            occlusion_plus: OcclusionPlusMode::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_target(mut self, target: TargetClass) -> Self {
        self.target = target;
        self
    }

    pub fn with_fill(mut self, fill: Fill) -> Self {
        self.fill = fill;
        self
    }

    pub fn with_ood_model(mut self, ood: ClassifierHandle) -> Self {
        self.ood_model = Some(ood);
        self
    }

    pub fn ood_handle(&self) -> &dyn Classifier {
        self.ood_model.as_deref().unwrap_or(self.model.as_ref())
    }

    /// Resolves the target class against the model.
    pub fn target_class(&self) -> Result<usize> {
        let n = self.model.n_classes();
        let class = match self.target {
            TargetClass::Index(c) => c,
            TargetClass::PredictedArgmax => self
                .model
                .predict(&self.image)
                .map_err(|e| e.at("original image"))?
                .argmax(),
        };
        if class >= n {
            return Err(validation(format!("target class {class} >= {n} classes")));
        }
        Ok(class)
    }

    fn meta(&self, kind: ExplainerKind) -> SaliencyMeta {
        SaliencyMeta {
            explainer: kind.name().to_string(),
            mask_digest: self.masks.digest(self.image.height(), self.image.width()),
            seed: self.seed,
        }
    }
}

/// Output of one explainer run.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub kind: ExplainerKind,
    /// Raw (unnormalized) saliency.
    pub saliency: SaliencyMap,
    pub attribution: Option<SegmentAttribution>,
    pub calibration: Option<InlierCalibration>,
    /// Prediction and inlier score for each perturbation, in mask order.
    pub samples: Vec<PerturbationOutcome>,
    /// Elementwise mean of the preservation masks that were applied.
    pub average_mask: Mask,
    pub wall_time_ms: u64,
}

impl Explanation {
    pub fn target_class(&self) -> usize {
        self.saliency.target_class
    }

    pub fn degenerate_warning(&self) -> bool {
        self.calibration.as_ref().is_some_and(|c| c.degenerate)
    }

    pub fn provenance(&self, spec: &MaskSpec) -> Provenance {
        Provenance {
            explainer: self.kind,
            seed: self.saliency.meta.seed,
            spec: spec.clone(),
            target_class: self.target_class(),
            calib: self.calibration.clone(),
            degenerate_warning: self.degenerate_warning(),
            wall_time_ms: self.wall_time_ms,
        }
    }
}

/// JSON record written next to each saliency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub explainer: ExplainerKind,
    pub seed: u64,
    pub spec: MaskSpec,
    pub target_class: usize,
    pub calib: Option<InlierCalibration>,
    pub degenerate_warning: bool,
    pub wall_time_ms: u64,
}

/// Target-class probability and inlier score of one perturbed image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationOutcome {
    pub prob: f64,
    pub inlier: f64,
}

/// Runs the explainer named by `kind`.
pub fn explain(kind: ExplainerKind, req: &ExplainRequest) -> Result<Explanation> {
    match kind {
        ExplainerKind::Rise => explain_rise(req),
        ExplainerKind::RisePlus => explain_rise_plus(req),
        ExplainerKind::Occlusion => explain_occlusion(req),
        ExplainerKind::OcclusionPlus => explain_occlusion_plus(req),
        ExplainerKind::Lime => explain_lime(req).map(|(e, _)| e),
        ExplainerKind::LimePlus => explain_lime_plus(req).map(|(e, _)| e),
    }
}

/// Shared state for classifying a stream of perturbations of one image.
pub(crate) struct Evaluator<'a> {
    pub(crate) req: &'a ExplainRequest,
    pub(crate) target: usize,
    ood: Option<(ClassWeights, InlierCalibration)>,
    started: Instant,
}

/// Masks per parallel batch; bounds peak memory for large mask sets.
const CHUNK: usize = 256;

impl<'a> Evaluator<'a> {
    pub(crate) fn new(req: &'a ExplainRequest, with_ood: bool) -> Result<Self> {
        let started = Instant::now();
        let target = req.target_class()?;
        let ood = if with_ood {
            let handle = req.ood_handle();
            require_ood(handle)?;
            let calib = calibrate(&req.image, handle, &req.fill)?;
            Some((handle.class_weights()?, calib))
        } else {
            None
        };
        Ok(Evaluator {
            req,
            target,
            ood,
            started,
        })
    }

    pub(crate) fn calibration(&self) -> Option<InlierCalibration> {
        self.ood.as_ref().map(|(_, c)| c.clone())
    }

    pub(crate) fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    /// Target probability of an arbitrary image.
    pub(crate) fn prob(&self, image: &Image) -> Result<f64> {
        let p = self.req.model.predict(image)?;
        p.get(self.target).ok_or_else(|| {
            Error::Backend(format!(
                "model returned {} probabilities, target class is {}",
                p.len(),
                self.target
            ))
        })
    }

    fn outcome(&self, mask: &Mask) -> Result<PerturbationOutcome> {
        let perturbed = apply_mask(&self.req.image, mask, &self.req.fill)?;
        let prob = self.prob(&perturbed)?;
        let inlier = match &self.ood {
            Some((weights, calib)) => {
                let h = max_similarity(self.req.ood_handle(), weights, &perturbed)?;
                inlier_score(h, calib)?.value()
            }
            None => 1.0,
        };
        Ok(PerturbationOutcome { prob, inlier })
    }

    /// Classifies `count` perturbations built by `preserve_mask(j)` and feeds
    /// them to `sink` strictly in index order. Also returns the average mask.
    pub(crate) fn run<F, S>(
        &self,
        count: usize,
        preserve_mask: F,
        mut sink: S,
    ) -> Result<(Vec<PerturbationOutcome>, Mask)>
    where
        F: Fn(usize) -> Mask + Sync,
        S: FnMut(usize, &Mask, PerturbationOutcome),
    {
        if count == 0 {
            return Err(validation("no perturbations to evaluate"));
        }
        let (h, w) = (self.req.image.height(), self.req.image.width());
        let mut sum = vec![0.0f64; h * w];
        let mut outcomes = Vec::with_capacity(count);
        for start in (0..count).step_by(CHUNK) {
            let end = (start + CHUNK).min(count);
            let batch: Vec<(Mask, PerturbationOutcome)> = (start..end)
                .into_par_iter()
                .map(|j| {
                    let mask = preserve_mask(j);
                    let out = self.outcome(&mask).map_err(|e| e.at(format!("mask {j}")))?;
                    Ok((mask, out))
                })
                .collect::<Result<_>>()?;
            for (offset, (mask, out)) in batch.into_iter().enumerate() {
                for (a, &v) in sum.iter_mut().zip(mask.data()) {
                    *a += f64::from(v);
                }
                sink(start + offset, &mask, out);
                outcomes.push(out);
            }
        }
        let n = count as f64;
        let avg = sum.into_iter().map(|a| ((a / n) as f32).clamp(0.0, 1.0)).collect();
        Ok((outcomes, Mask::from_trusted(h, w, avg, MaskSemantics::Preserve)))
    }
}
