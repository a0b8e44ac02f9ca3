//! Weighted ridge regression with an unpenalized intercept, solved through the
//! normal equations. Problem sizes here are tiny (K ≤ a few hundred), so a
//! dense Cholesky factorization is the right tool.

use nalgebra::{DMatrix, DVector};

use crate::error::{validation, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Ratio of extreme eigenvalues of the regularized normal matrix.
    pub condition_number: f64,
}

/// Minimizes `Σ_j w_j (y_j − b − x_jᵀβ)² + λ‖β‖²`.
///
/// `rows` holds one design row per sample (without the intercept column).
pub fn weighted_ridge(rows: &[Vec<f64>], targets: &[f64], weights: &[f64], lambda: f64) -> Result<RidgeFit> {
    let n = rows.len();
    if n == 0 {
        return Err(validation("ridge regression needs at least one sample"));
    }
    if targets.len() != n || weights.len() != n {
        return Err(validation(format!(
            "ridge inputs disagree: {n} rows, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(validation(format!(
            "ridge penalty {lambda} must be finite and non-negative"
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(validation("sample weights must be finite and non-negative"));
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(validation("regression targets must be finite"));
    }
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(validation("design rows differ in length"));
    }

    let p = k + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut xa = vec![0.0; p];
    for ((row, &y), &w) in rows.iter().zip(targets).zip(weights) {
        xa[0] = 1.0;
        xa[1..].copy_from_slice(row);
        for a in 0..p {
            let wa = w * xa[a];
            if wa == 0.0 {
                continue;
            }
            rhs[a] += wa * y;
            for b in a..p {
                gram[(a, b)] += wa * xa[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    for d in 1..p {
        gram[(d, d)] += lambda;
    }

    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if lo.is_nan() || lo <= hi * 1e-14 {
        return Err(validation(
            "normal equations are singular; increase the ridge penalty or sample weights",
        ));
    }
    let condition_number = hi / lo;

    let chol = gram
        .cholesky()
        .ok_or_else(|| validation("normal equations are singular; increase the ridge penalty or sample weights"))?;
    let solution = chol.solve(&rhs);
    Ok(RidgeFit {
        intercept: solution[0],
        coefficients: solution.iter().skip(1).copied().collect(),
        condition_number,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_fit() {
        let fit = weighted_ridge(&[vec![0.0], vec![1.0]], &[0.2, 0.9], &[0.3, 1.0], 1e-12).unwrap();
        assert!((fit.coefficients[0] - 0.7).abs() < 1e-9);
        assert!((fit.intercept - 0.2).abs() < 1e-9);
    }

    #[test]
    fn exact_linear_recovery() {
        let truth = [0.3, -0.2, 0.15];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for m in 0..8u32 {
            let r: Vec<f64> = (0..3).map(|b| f64::from((m >> b) & 1)).collect();
            y.push(0.1 + r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>());
            rows.push(r);
        }
        let fit = weighted_ridge(&rows, &y, &[1.0; 8], 0.0).unwrap();
        for (b, t) in fit.coefficients.iter().zip(&truth) {
            assert!((b - t).abs() < 1e-12);
        }
        assert!((fit.intercept - 0.1).abs() < 1e-12);
        assert!(fit.condition_number >= 1.0 && fit.condition_number.is_finite());
    }

    #[test]
    fn penalty_shrinks_coefficients() {
        let rows = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        let y = [0.0, 1.0, 0.0, 1.0];
        let loose = weighted_ridge(&rows, &y, &[1.0; 4], 1e-9).unwrap();
        let tight = weighted_ridge(&rows, &y, &[1.0; 4], 10.0).unwrap();
        assert!(tight.coefficients[0].abs() < loose.coefficients[0].abs());
    }

    #[test]
    fn singular_without_penalty() {
        // Constant column duplicates the intercept.
        let rows = vec![vec![1.0], vec![1.0]];
        assert!(weighted_ridge(&rows, &[0.1, 0.2], &[1.0, 1.0], 0.0).is_err());
        assert!(weighted_ridge(&rows, &[0.1, 0.2], &[1.0, 1.0], 0.01).is_ok());
    }

    #[test]
    fn input_validation() {
        assert!(weighted_ridge(&[], &[], &[], 0.1).is_err());
        assert!(weighted_ridge(&[vec![1.0]], &[0.1, 0.2], &[1.0], 0.1).is_err());
        assert!(weighted_ridge(&[vec![1.0]], &[0.1], &[-1.0], 0.1).is_err());
        assert!(weighted_ridge(&[vec![1.0]], &[0.1], &[1.0], -0.1).is_err());
    }
}
