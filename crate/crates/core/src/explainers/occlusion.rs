use serde::{Deserialize, Serialize};

use super::{Evaluator, ExplainRequest, ExplainerKind, Explanation, MaskSpec};
use crate::error::{shape, validation, Result};
use crate::types::{Mask, MaskSemantics, SaliencyMap};

/// How the inlier score enters the occlusion sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionPlusMode {
    /// `(p(C|I) − p(C|P_j)·s_j) · M_j`
    #[default]
    ScaleProbability,
    /// `(p(C|I) − p(C|P_j)) · s_j · M_j`
    ScaleDifference,
}

impl OcclusionPlusMode {
    fn contribution(self, p_orig: f64, p_pert: f64, inlier: f64) -> f64 {
        match self {
            OcclusionPlusMode::ScaleProbability => p_orig - p_pert * inlier,
            OcclusionPlusMode::ScaleDifference => (p_orig - p_pert) * inlier,
        }
    }
}

/// `S = Σ_j (p_orig − p_j·s_j) · M_j` over region-indicator masks (or the
/// alternative form selected by `mode`).
pub fn aggregate_occlusion(
    regions: &[Mask],
    p_orig: f64,
    probs: &[f64],
    inlier: Option<&[f64]>,
    mode: OcclusionPlusMode,
) -> Result<Vec<f64>> {
    let first = regions.first().ok_or_else(|| validation("no masks to aggregate"))?;
    if probs.len() != regions.len() || inlier.is_some_and(|s| s.len() != regions.len()) {
        return Err(shape("masks, probabilities and inlier scores differ in count"));
    }
    let mut acc = vec![0.0; first.height() * first.width()];
    for (j, m) in regions.iter().enumerate() {
        if m.semantics() != MaskSemantics::OccludeRegion {
            return Err(validation("occlusion aggregates region-indicator masks"));
        }
        if m.data().len() != acc.len() {
            return Err(shape(format!("mask {j} has a different size")));
        }
        let c = mode.contribution(p_orig, probs[j], inlier.map_or(1.0, |s| s[j]));
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += c * f64::from(v);
        }
    }
    Ok(acc)
}

fn run(req: &ExplainRequest, kind: ExplainerKind) -> Result<Explanation> {
    let MaskSpec::Occlusion(params) = &req.masks else {
        return Err(validation(format!("{kind} needs an occlusion mask spec")));
    };
    let (h, w) = (req.image.height(), req.image.width());
    let spec = params.spec(h, w);
    spec.validate()?;
    let positions = spec.positions();
    let eval = Evaluator::new(req, kind.uses_ood())?;
    let p_orig = eval.prob(&req.image).map_err(|e| e.at("original image"))?;
    let mode = req.occlusion_plus;
    let mut acc = vec![0.0; h * w];
    let (samples, average_mask) = eval.run(
        positions.len(),
        |j| spec.mask_at(positions[j]).to_preserve(),
        |j, _, out| {
            let c = mode.contribution(p_orig, out.prob, out.inlier);
            let pos = positions[j];
            for y in pos.y..pos.y + spec.patch {
                for a in &mut acc[y * w + pos.x..y * w + pos.x + spec.patch] {
                    *a += c;
                }
            }
        },
    )?;
    let saliency = SaliencyMap::new(h, w, acc, eval.target, req.meta(kind))?;
    Ok(Explanation {
        kind,
        saliency,
        attribution: None,
        calibration: eval.calibration(),
        samples,
        average_mask,
        wall_time_ms: eval.elapsed_ms(),
    })
}

/// Sums the probability drop caused by each sliding patch over the pixels it covers.
pub fn explain_occlusion(req: &ExplainRequest) -> Result<Explanation> {
    run(req, ExplainerKind::Occlusion)
}

/// As [`explain_occlusion`], with perturbed-image probabilities discounted by
/// their inlier scores (see [`OcclusionPlusMode`]).
pub fn explain_occlusion_plus(req: &ExplainRequest) -> Result<Explanation> {
    run(req, ExplainerKind::OcclusionPlus)
}
