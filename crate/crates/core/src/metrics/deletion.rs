use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{require_ood, Classifier};
use crate::error::{shape, validation, Error, Result};
use crate::ood::{calibrate, inlier_score, max_similarity};
use crate::types::{Fill, Image, SaliencyMap};

/// Probability of the target class as the most salient pixels are removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    /// Deleted fractions `k / n_steps`, `k = 0..=n_steps`.
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl DeletionCurve {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(validation("a deletion curve needs at least two points"));
        }
        let n = values.len() - 1;
        let thetas = (0..=n).map(|k| k as f64 / n as f64).collect();
        let auc = trapezoid(&values);
        Ok(DeletionCurve { thetas, values, auc })
    }
}

/// Trapezoidal integral of samples on a uniform grid over `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = (values.len() - 1) as f64;
    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / n
}

/// Pixel indices by descending score; equal scores keep row-major order.
pub fn deletion_order(saliency: &SaliencyMap) -> Vec<usize> {
    let s = saliency.scores();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order
}

/// Both deletion curves from one pass over the deletion schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionPair {
    pub deletion: DeletionCurve,
    /// Present when an inlier-capable model was supplied.
    pub deletion_plus: Option<DeletionCurve>,
    /// Inlier score at each step, when computed.
    pub inlier: Option<Vec<f64>>,
    pub degenerate_calibration: bool,
}

/// Evaluates the deletion schedule once. With `ood` set, also produces the
/// inlier-weighted curve using the image's calibration under `fill`.
pub fn deletion_pair(
    image: &Image,
    saliency: &SaliencyMap,
    model: &dyn Classifier,
    ood: Option<&dyn Classifier>,
    target: usize,
    n_steps: usize,
    fill: &Fill,
) -> Result<DeletionPair> {
    if n_steps == 0 {
        return Err(validation("deletion needs at least one step"));
    }
    if (saliency.height(), saliency.width()) != (image.height(), image.width()) {
        return Err(shape(format!(
            "saliency is {}x{}, image is {}x{}",
            saliency.height(),
            saliency.width(),
            image.height(),
            image.width()
        )));
    }
    if target >= model.n_classes() {
        return Err(validation(format!(
            "target class {target} >= {} classes",
            model.n_classes()
        )));
    }
    let scoring = match ood {
        Some(handle) => {
            require_ood(handle)?;
            let calib = calibrate(image, handle, fill)?;
            Some((handle, handle.class_weights()?, calib))
        }
        None => None,
    };
    let order = deletion_order(saliency);
    let total = image.pixels();
    let points: Vec<(f64, Option<f64>)> = (0..=n_steps)
        .into_par_iter()
        .map(|k| {
            let count = k * total / n_steps;
            let step = || -> Result<(f64, Option<f64>)> {
                let perturbed = image.with_pixels_filled(&order[..count], fill)?;
                let probs = model.predict(&perturbed)?;
                let p = probs
                    .get(target)
                    .ok_or_else(|| Error::Backend(format!("model returned {} probabilities", probs.len())))?;
                let s = match &scoring {
                    Some((handle, weights, calib)) => {
                        let h = max_similarity(*handle, weights, &perturbed)?;
                        Some(inlier_score(h, calib)?.value())
                    }
                    None => None,
                };
                Ok((p, s))
            };
            step().map_err(|e| e.at(format!("deletion step {k}")))
        })
        .collect::<Result<_>>()?;

    let probs: Vec<f64> = points.iter().map(|(p, _)| *p).collect();
    let deletion = DeletionCurve::from_values(probs.clone())?;
    let (deletion_plus, inlier, degenerate) = match &scoring {
        Some((_, _, calib)) => {
            let s: Vec<f64> = points.iter().map(|(_, s)| s.expect("scored")).collect();
            let weighted = probs.iter().zip(&s).map(|(p, s)| p * s).collect();
            (Some(DeletionCurve::from_values(weighted)?), Some(s), calib.degenerate)
        }
        None => (None, None, false),
    };
    Ok(DeletionPair {
        deletion,
        deletion_plus,
        inlier,
        degenerate_calibration: degenerate,
    })
}

/// Area under the target probability as pixels are removed in saliency order.
pub fn deletion_curve(
    image: &Image,
    saliency: &SaliencyMap,
    model: &dyn Classifier,
    target: usize,
    n_steps: usize,
    fill: &Fill,
) -> Result<DeletionCurve> {
    Ok(deletion_pair(image, saliency, model, None, target, n_steps, fill)?.deletion)
}

/// As [`deletion_curve`], with each point weighted by its inlier score.
pub fn deletion_plus_curve(
    image: &Image,
    saliency: &SaliencyMap,
    model: &dyn Classifier,
    ood: &dyn Classifier,
    target: usize,
    n_steps: usize,
    fill: &Fill,
) -> Result<DeletionCurve> {
    let pair = deletion_pair(image, saliency, model, Some(ood), target, n_steps, fill)?;
    Ok(pair.deletion_plus.expect("inlier model supplied"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::test_support::fn_model;

    fn image() -> Image {
        Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn trapezoid_examples() {
        assert!((trapezoid(&[1.0, 0.75, 0.5, 0.25, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(trapezoid(&[0.3, 0.5]), 0.4);
    }

    #[test]
    fn order_breaks_ties_row_major() {
        let s = SaliencyMap::from_scores(2, 2, vec![0.5, 0.9, 0.5, 0.9]).unwrap();
        assert_eq!(deletion_order(&s), vec![1, 3, 0, 2]);
    }

    #[test]
    fn constant_model_auc_is_the_constant() {
        let c = 0.3141;
        let sal = SaliencyMap::from_scores(2, 2, vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let curve = deletion_curve(&image(), &sal, fn_model(move |_| c).as_ref(), 0, 10, &Fill::grey()).unwrap();
        assert!((curve.auc - c).abs() < 1e-12);
        assert_eq!(curve.thetas.len(), 11);
    }

    #[test]
    fn fraction_kept_model() {
        let model = fn_model(|img: &Image| img.data().iter().filter(|&&v| v != 0.5).count() as f64 / 4.0);
        let sal = SaliencyMap::from_scores(2, 2, vec![1.0; 4]).unwrap();
        let curve = deletion_curve(&image(), &sal, model.as_ref(), 0, 4, &Fill::grey()).unwrap();
        assert_eq!(curve.values, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!((curve.auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_step_is_two_point_trapezoid() {
        let model = fn_model(|img: &Image| if img.get(0, 0, 0) == 0.5 { 0.2 } else { 0.6 });
        let sal = SaliencyMap::from_scores(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let curve = deletion_curve(&image(), &sal, model.as_ref(), 0, 1, &Fill::grey()).unwrap();
        assert!((curve.auc - 0.4).abs() < 1e-15);
    }

    #[test]
    fn first_point_is_the_unmodified_prediction() {
        let model = fn_model(|img: &Image| f64::from(img.data().iter().sum::<f32>()) / 4.0);
        let sal = SaliencyMap::from_scores(2, 2, vec![0.3, 0.1, 0.2, 0.0]).unwrap();
        let curve = deletion_curve(&image(), &sal, model.as_ref(), 0, 3, &Fill::grey()).unwrap();
        assert_eq!(curve.values[0], model.predict(&image()).unwrap().as_slice()[0]);
        // Three steps over four pixels delete 0, 1, 2, 4 pixels.
        let last_but_one = image().with_pixels_filled(&[0, 2], &Fill::grey()).unwrap();
        assert_eq!(curve.values[2], model.predict(&last_but_one).unwrap().as_slice()[0]);
    }

    #[test]
    fn validation_errors() {
        let sal = SaliencyMap::from_scores(1, 4, vec![0.0; 4]).unwrap();
        let m = fn_model(|_| 0.5);
        assert!(deletion_curve(&image(), &sal, m.as_ref(), 0, 4, &Fill::grey()).is_err());
        let sal = SaliencyMap::from_scores(2, 2, vec![0.0; 4]).unwrap();
        assert!(deletion_curve(&image(), &sal, m.as_ref(), 0, 0, &Fill::grey()).is_err());
        assert!(deletion_curve(&image(), &sal, m.as_ref(), 2, 4, &Fill::grey()).is_err());
        assert!(deletion_plus_curve(&image(), &sal, m.as_ref(), m.as_ref(), 0, 4, &Fill::grey()).is_err());
    }
}
