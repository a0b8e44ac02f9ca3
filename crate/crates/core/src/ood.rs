//! Inlier scoring for perturbed images.
//!
//! Each image is summarized by its best class-cosine similarity
//! `max_i cos(ω_i, f(I))` between penultimate features and last-layer class
//! weights. Two anchors per explained image fix the scale: the unperturbed
//! image (score 1) and the fully filled image (score 0). Anything in between
//! is interpolated linearly and clamped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::classifier::{l2_norm, require_ood, ClassWeights, Classifier, FeatureVector};
use crate::error::{validation, Error, Result};
use crate::types::{apply_mask, Fill, Image, Mask, MaskSemantics};

/// Anchors closer than this are treated as coincident.
pub const DEGENERACY_EPS: f64 = 1e-9;

/// Per-image anchors for the inlier score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierCalibration {
    pub h_origin: f64,
    pub h_grey: f64,
    pub fill: Fill,
    pub degenerate: bool,
}

impl InlierCalibration {
    pub fn new(h_origin: f64, h_grey: f64, fill: Fill) -> Result<Self> {
        for (name, h) in [("h_origin", h_origin), ("h_grey", h_grey)] {
            if !(-1.0..=1.0).contains(&h) {
                return Err(validation(format!("{name} = {h} is outside [-1, 1]")));
            }
        }
        Ok(InlierCalibration {
            h_origin,
            h_grey,
            fill,
            degenerate: h_origin <= h_grey + DEGENERACY_EPS,
        })
    }
}

/// A value in `[0, 1]`; 1 means indistinguishable from the original image.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct InlierScore(f64);

impl InlierScore {
    pub const ONE: InlierScore = InlierScore(1.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `h_i = ω_iᵀf / (‖ω_i‖‖f‖)` for every class.
pub fn cosine_scores(features: &FeatureVector, weights: &ClassWeights) -> Result<Vec<f64>> {
    if features.len() != weights.dim() {
        return Err(Error::Shape(format!(
            "features have length {}, class weights have {} columns",
            features.len(),
            weights.dim()
        )));
    }
    let f = features.values();
    let f_norm = l2_norm(f);
    if f_norm == 0.0 {
        return Err(Error::ZeroFeature);
    }
    weights
        .rows()
        .iter()
        .map(|w| {
            let w_norm = l2_norm(w);
            if w_norm == 0.0 {
                return Err(Error::ZeroFeature);
            }
            let dot: f64 = w.iter().zip(f).map(|(a, b)| a * b).sum();
            Ok((dot / (w_norm * f_norm)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// `max_i h_i` for one image.
pub fn max_similarity(handle: &dyn Classifier, weights: &ClassWeights, image: &Image) -> Result<f64> {
    let f = handle.penultimate_features(image)?;
    let h = cosine_scores(&f, weights)?;
    Ok(h.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Computes both anchors for `image` under `fill`.
pub fn calibrate(image: &Image, handle: &dyn Classifier, fill: &Fill) -> Result<InlierCalibration> {
    require_ood(handle)?;
    let weights = handle.class_weights()?;
    let h_origin = max_similarity(handle, &weights, image).map_err(|e| e.at("original image"))?;
    let blank = Mask::constant(image.height(), image.width(), 0.0, MaskSemantics::Preserve)?;
    let grey = apply_mask(image, &blank, fill)?;
    let h_grey = max_similarity(handle, &weights, &grey).map_err(|e| e.at("fill image"))?;
    let calib = InlierCalibration::new(h_origin, h_grey, fill.clone())?;
    if calib.degenerate {
        warn!(
            h_origin,
            h_grey, "degenerate inlier calibration; inlier scores fixed at 1"
        );
    }
    Ok(calib)
}

/// Piecewise-linear inlier score with exact 1/0 branches at the anchors.
pub fn inlier_score(h_max: f64, calib: &InlierCalibration) -> Result<InlierScore> {
    if !(-1.0..=1.0).contains(&h_max) {
        return Err(validation(format!("similarity {h_max} is outside [-1, 1]")));
    }
    if calib.degenerate {
        return Ok(InlierScore::ONE);
    }
    let s = if h_max >= calib.h_origin {
        1.0
    } else if h_max <= calib.h_grey {
        0.0
    } else {
        ((h_max - calib.h_grey) / (calib.h_origin - calib.h_grey)).clamp(0.0, 1.0)
    };
    Ok(InlierScore(s))
}

/// Scores a batch of perturbed images, preserving order. The first failing
/// item aborts the batch, reported with its index.
pub fn score_batch(
    perturbed: &[Image],
    handle: &dyn Classifier,
    calib: &InlierCalibration,
) -> Result<Vec<InlierScore>> {
    require_ood(handle)?;
    let weights = handle.class_weights()?;
    perturbed
        .par_iter()
        .enumerate()
        .map(|(j, img)| {
            max_similarity(handle, &weights, img)
                .and_then(|h| inlier_score(h, calib))
                .map_err(|e| e.at(format!("perturbed image {j}")))
        })
        .collect()
}
