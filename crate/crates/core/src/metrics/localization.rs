use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::types::{normalize_saliency, BoundingBox, SaliencyMap};

/// Outcome of the pointing game on one map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointingResult {
    pub hit: bool,
    /// The maximum score occurs at more than one pixel.
    pub ambiguous: bool,
    pub argmax: usize,
}

/// Checks whether the highest-scoring pixel (lowest row-major index on ties)
/// falls inside `bbox`.
pub fn pointing_game(saliency: &SaliencyMap, bbox: &BoundingBox) -> Result<PointingResult> {
    bbox.validate_for(saliency.height(), saliency.width())?;
    let s = saliency.scores();
    let mut argmax = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[argmax] {
            argmax = i;
        }
    }
    let ambiguous = s.iter().filter(|&&v| v == s[argmax]).count() > 1;
    Ok(PointingResult {
        hit: bbox.contains_index(argmax, saliency.width()),
        ambiguous,
        argmax,
    })
}

/// `#hits / (#hits + #misses)`.
pub fn pointing_accuracy(hits: &[bool]) -> Result<f64> {
    if hits.is_empty() {
        return Err(validation("no pointing-game results to aggregate"));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

fn threshold_ratio(saliency: &SaliencyMap, bbox: &BoundingBox, n_theta: usize, weighted: bool) -> Result<f64> {
    if n_theta == 0 {
        return Err(validation("n_theta must be at least 1"));
    }
    bbox.validate_for(saliency.height(), saliency.width())?;
    let norm = normalize_saliency(saliency)?;
    let w = saliency.width();
    let mut total = 0.0;
    for k in 0..n_theta {
        let theta = k as f64 / n_theta as f64;
        let (mut inside, mut outside) = (0.0, 0.0);
        for (i, &v) in norm.scores().iter().enumerate() {
            if v > theta {
                let weight = if weighted { v } else { 1.0 };
                if bbox.contains_index(i, w) {
                    inside += weight;
                } else {
                    outside += weight;
                }
            }
        }
        if inside + outside > 0.0 {
            total += inside / (inside + outside);
        }
    }
    Ok(total / n_theta as f64)
}

/// Score-weighted share of salient mass inside `bbox`, averaged over
/// thresholds `θ = k / n_theta`, `k = 0..n_theta`, on the normalized map.
pub fn wiosr(saliency: &SaliencyMap, bbox: &BoundingBox, n_theta: usize) -> Result<f64> {
    threshold_ratio(saliency, bbox, n_theta, true)
}

/// Unweighted counterpart of [`wiosr`]: share of above-threshold pixels inside `bbox`.
pub fn iosr(saliency: &SaliencyMap, bbox: &BoundingBox, n_theta: usize) -> Result<f64> {
    threshold_ratio(saliency, bbox, n_theta, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub pointing_hit: bool,
    pub pointing_ambiguous: bool,
    pub iosr: f64,
    pub wiosr: f64,
}

pub fn localization(saliency: &SaliencyMap, bbox: &BoundingBox, n_theta: usize) -> Result<LocalizationReport> {
    let pg = pointing_game(saliency, bbox)?;
    Ok(LocalizationReport {
        pointing_hit: pg.hit,
        pointing_ambiguous: pg.ambiguous,
        iosr: iosr(saliency, bbox, n_theta)?,
        wiosr: wiosr(saliency, bbox, n_theta)?,
    })
}
