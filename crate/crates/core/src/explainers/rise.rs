use super::{Evaluator, ExplainRequest, ExplainerKind, Explanation, MaskSpec};
use crate::error::{shape, validation, Result};
use crate::masking::RiseMaskGenerator;
use crate::types::{Mask, MaskSemantics, SaliencyMap};

/// `S = Σ_j p_j · s_j · M_j`, accumulated in index order. Pass `None` for
/// `inlier` to aggregate without scores.
pub fn aggregate_rise(masks: &[Mask], probs: &[f64], inlier: Option<&[f64]>) -> Result<Vec<f64>> {
    let first = masks.first().ok_or_else(|| validation("no masks to aggregate"))?;
    if probs.len() != masks.len() || inlier.is_some_and(|s| s.len() != masks.len()) {
        return Err(shape("masks, probabilities and inlier scores differ in count"));
    }
    let mut acc = vec![0.0; first.height() * first.width()];
    for (j, mask) in masks.iter().enumerate() {
        if mask.semantics() != MaskSemantics::Preserve {
            return Err(validation("RISE aggregates preservation masks"));
        }
        if mask.data().len() != acc.len() {
            return Err(shape(format!("mask {j} has a different size")));
        }
        let s = inlier.map_or(1.0, |s| s[j]);
        accumulate(&mut acc, mask, probs[j], s);
    }
    Ok(acc)
}

fn accumulate(acc: &mut [f64], mask: &Mask, prob: f64, inlier: f64) {
    let coeff = prob * inlier;
    for (a, &m) in acc.iter_mut().zip(mask.data()) {
        *a += coeff * f64::from(m);
    }
}

fn run(req: &ExplainRequest, kind: ExplainerKind) -> Result<Explanation> {
    let MaskSpec::Rise(params) = &req.masks else {
        return Err(validation(format!("{kind} needs a RISE mask spec")));
    };
    let (h, w) = (req.image.height(), req.image.width());
    let gen = RiseMaskGenerator::new(params.spec(h, w), req.seed)?;
    let eval = Evaluator::new(req, kind.uses_ood())?;
    let mut acc = vec![0.0; h * w];
    let (samples, average_mask) = eval.run(
        gen.len(),
        |j| gen.mask(j),
        |_, mask, out| accumulate(&mut acc, mask, out.prob, out.inlier),
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

/// Probability-weighted sum of random preservation masks.
pub fn explain_rise(req: &ExplainRequest) -> Result<Explanation> {
    run(req, ExplainerKind::Rise)
}

/// As [`explain_rise`], with each mask additionally weighted by the inlier
/// score of its perturbed image.
pub fn explain_rise_plus(req: &ExplainRequest) -> Result<Explanation> {
    run(req, ExplainerKind::RisePlus)
}
