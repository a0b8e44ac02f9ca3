use serde::{Deserialize, Serialize};

use super::ridge::weighted_ridge;
use super::{Evaluator, ExplainRequest, ExplainerKind, Explanation, MaskSpec};
use crate::error::{validation, Result};
use crate::masking::{sample_segment_masks, segment_grid, SegmentMap};
use crate::types::SaliencyMap;

/// Surrogate-fit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeSettings {
    /// Ridge penalty on the segment coefficients (not the intercept).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Proximity kernel width `σ` in `π = exp(−d²/σ²)`.
    #[serde(default = "default_sigma")]
    pub kernel_width: f64,
}

fn default_lambda() -> f64 {
    0.01
}

fn default_sigma() -> f64 {
    0.25
}

impl Default for LimeSettings {
    fn default() -> Self {
        LimeSettings {
            lambda: default_lambda(),
            kernel_width: default_sigma(),
        }
    }
}

/// Linear surrogate coefficients, one per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttribution {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub n_segments: usize,
    pub condition_number: f64,
}

/// Proximity weight of a sample keeping `kept` of `k` segments.
pub fn proximity(kept: usize, k: usize, kernel_width: f64) -> f64 {
    let d = 1.0 - kept as f64 / k as f64;
    (-(d * d) / (kernel_width * kernel_width)).exp()
}

/// Fits the weighted ridge surrogate of `targets` on the binary segment vectors.
pub fn fit_lime(zs: &[Vec<bool>], targets: &[f64], settings: &LimeSettings) -> Result<SegmentAttribution> {
    let k = zs.first().map(Vec::len).ok_or_else(|| validation("no LIME samples"))?;
    if k == 0 {
        return Err(validation("LIME samples have no segments"));
    }
    if settings.kernel_width.is_nan() || settings.kernel_width <= 0.0 {
        return Err(validation("LIME kernel width must be positive"));
    }
    let rows: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let weights: Vec<f64> = zs
        .iter()
        .map(|z| proximity(z.iter().filter(|&&b| b).count(), k, settings.kernel_width))
        .collect();
    let fit = weighted_ridge(&rows, targets, &weights, settings.lambda)?;
    Ok(SegmentAttribution {
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        n_segments: k,
        condition_number: fit.condition_number,
    })
}

fn segments_for(req: &ExplainRequest) -> Result<SegmentMap> {
    let MaskSpec::Lime(params) = &req.masks else {
        return Err(validation("LIME needs a lime mask spec"));
    };
    let (h, w) = (req.image.height(), req.image.width());
    let segmap = match &params.segments_png {
        Some(path) => SegmentMap::from_png(path)?,
        None => segment_grid(h, w, params.k_side)?,
    };
    if (segmap.height(), segmap.width()) != (h, w) {
        return Err(validation(format!(
            "segment map is {}x{}, image is {h}x{w}",
            segmap.height(),
            segmap.width()
        )));
    }
    Ok(segmap)
}

fn run(req: &ExplainRequest, kind: ExplainerKind) -> Result<(Explanation, SegmentMap)> {
    let MaskSpec::Lime(params) = &req.masks else {
        return Err(validation(format!("{kind} needs a lime mask spec")));
    };
    let segmap = segments_for(req)?;
    let samples = sample_segment_masks(&segmap, params.n_samples, params.keep_prob, req.seed)?;
    let eval = Evaluator::new(req, kind.uses_ood())?;
    let (outcomes, average_mask) = eval.run(samples.len(), |j| samples[j].mask.clone(), |_, _, _| {})?;
    let targets: Vec<f64> = outcomes.iter().map(|o| o.prob * o.inlier).collect();
    let zs: Vec<Vec<bool>> = samples.into_iter().map(|s| s.z).collect();
    let attribution = fit_lime(&zs, &targets, &req.lime)?;
    let painted = segmap.paint(&attribution.coefficients);
    let saliency = SaliencyMap::new(
        req.image.height(),
        req.image.width(),
        painted,
        eval.target,
        req.meta(kind),
    )?;
    Ok((
        Explanation {
            kind,
            saliency,
            attribution: Some(attribution),
            calibration: eval.calibration(),
            samples: outcomes,
            average_mask,
            wall_time_ms: eval.elapsed_ms(),
        },
        segmap,
    ))
}

/// Fits a proximity-weighted linear surrogate over random segment subsets.
/// The saliency map paints each segment with its coefficient.
pub fn explain_lime(req: &ExplainRequest) -> Result<(Explanation, SegmentMap)> {
    run(req, ExplainerKind::Lime)
}

/// As [`explain_lime`], regressing on probabilities multiplied by inlier scores.
pub fn explain_lime_plus(req: &ExplainRequest) -> Result<(Explanation, SegmentMap)> {
    run(req, ExplainerKind::LimePlus)
}
