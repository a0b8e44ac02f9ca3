use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::masking::average_mask;
use crate::stats::pearson;
use crate::types::{normalize_saliency, Mask, SaliencyMap};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub r: f64,
    pub degraded: bool,
}

/// Flags maps that mostly reproduce the average perturbation mask.
pub fn degradation_detect(saliency: &SaliencyMap, masks: &[Mask], threshold: f64) -> Result<DegradationReport> {
    let avg = average_mask(masks)?;
    degradation_against(saliency, &avg, threshold)
}

/// As [`degradation_detect`] with a precomputed average mask.
pub fn degradation_against(saliency: &SaliencyMap, average: &Mask, threshold: f64) -> Result<DegradationReport> {
    if (average.height(), average.width()) != (saliency.height(), saliency.width()) {
        return Err(shape("average mask and saliency differ in size"));
    }
    let norm = normalize_saliency(saliency)?;
    let avg: Vec<f64> = average.data().iter().map(|&v| f64::from(v)).collect();
    match pearson(norm.scores(), &avg) {
        Ok(r) => Ok(DegradationReport {
            r,
            degraded: r > threshold,
        }),
        Err(Error::DegenerateCorrelation) => Ok(DegradationReport {
            r: 0.0,
            degraded: false,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MaskSemantics;

    fn masks() -> Vec<Mask> {
        vec![
            Mask::new(2, 2, vec![1.0, 0.0, 1.0, 0.0], MaskSemantics::Preserve).unwrap(),
            Mask::new(2, 2, vec![1.0, 1.0, 0.0, 0.0], MaskSemantics::Preserve).unwrap(),
        ]
    }

    #[test]
    fn self_correlation_is_degraded() {
        let s = SaliencyMap::from_scores(2, 2, vec![1.0, 0.5, 0.5, 0.0]).unwrap();
        let r = degradation_detect(&s, &masks(), DEFAULT_THRESHOLD).unwrap();
        assert!((r.r - 1.0).abs() < 1e-12 && r.degraded);
    }

    #[test]
    fn anti_correlation_is_not() {
        let s = SaliencyMap::from_scores(2, 2, vec![0.0, 0.5, 0.5, 1.0]).unwrap();
        let r = degradation_detect(&s, &masks(), DEFAULT_THRESHOLD).unwrap();
        assert!((r.r + 1.0).abs() < 1e-12 && !r.degraded);
    }

    #[test]
    fn constant_inputs_record_zero() {
        let s = SaliencyMap::from_scores(2, 2, vec![0.3; 4]).unwrap();
        assert_eq!(
            degradation_detect(&s, &masks(), DEFAULT_THRESHOLD).unwrap(),
            DegradationReport {
                r: 0.0,
                degraded: false
            }
        );
    }

    #[test]
    fn size_mismatch() {
        let s = SaliencyMap::from_scores(1, 4, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(degradation_detect(&s, &masks(), DEFAULT_THRESHOLD).is_err());
        assert!(degradation_detect(&s, &[], DEFAULT_THRESHOLD).is_err());
    }
}
