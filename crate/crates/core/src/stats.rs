use crate::error::{shape, validation, Error, Result};

/// Sample Pearson correlation of two equally sized grids, flattened.
///
/// Fails with [`Error::DegenerateCorrelation`] when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!(
            "pearson inputs differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(validation("pearson inputs are empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(validation("pearson inputs must be finite"));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(Error::DegenerateCorrelation);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and sample (n − 1) standard deviation; the deviation is `None` for
/// fewer than two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Some((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn self_and_anti_correlation() {
        let a = [0.3, -1.0, 2.0, 0.7];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = [1.0, -2.0, 3.0, -2.0];
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        assert!((pearson(&b, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_value() {
        // cov = 6.5, var_a = 5, var_b = 8.75 → 6.5 / sqrt(43.75)
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.9827).abs() < 1e-4);
        assert!((r - 6.5 / 43.75f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateCorrelation)
        ));
        assert!(matches!(pearson(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), Some((7.0, None)));
        assert_eq!(mean_std(&[]), None);
    }

    proptest! {
        #[test]
        fn symmetric_and_affine_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            scale in 0.1f64..10.0, shift in -5.0f64..5.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (Ok(ab), Ok(ba)) = (pearson(&a, &b), pearson(&b, &a)) else { return Ok(()); };
            prop_assert!((ab - ba).abs() < 1e-12);
            let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            let r2 = pearson(&a2, &b).unwrap();
            prop_assert!((ab - r2).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
