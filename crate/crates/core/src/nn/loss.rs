use crate::error::{Error, Result};

use super::Real;

/// Probabilities from logits, shifted by the max logit before exponentiating.
pub fn softmax(logits: &[Real]) -> Vec<Real> {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln p[label]` and its gradient `p - onehot(label)` with respect to the logits.
pub fn softmax_cross_entropy(logits: &[Real], label: usize) -> Result<(f64, Vec<Real>)> {
    if label >= logits.len() {
        return Err(Error::contract(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let log_sum: f64 = logits.iter().map(|&z| ((z - max) as f64).exp()).sum::<f64>().ln();
    let loss = log_sum - (logits[label] - max) as f64;
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean of squared errors over the vector, gradient `2 (pred - target) / n`.
pub fn mse_loss(pred: &[Real], target: &[Real]) -> Result<(f64, Vec<Real>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::contract(format!("mse on lengths {} and {}", pred.len(), target.len())));
    }
    let n = pred.len() as Real;
    let loss = pred.iter().zip(target).map(|(p, t)| ((p - t) as f64).powi(2)).sum::<f64>() / pred.len() as f64;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let o = x[i];
                x[i] = o + eps;
                let up = f(&x);
                x[i] = o - eps;
                let down = f(&x);
                x[i] = o;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let s: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / s.max(1e-300)
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = softmax_cross_entropy(&[0.3; 7], 2).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (_, g) = softmax_cross_entropy(&[1.0, -2.0, 0.5, 3.0], 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(softmax_cross_entropy(&[1.0], 1).is_err());
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let z = [0.2, -1.3, 2.1, 0.7, -0.4];
        let (_, g) = softmax_cross_entropy(&z, 3).unwrap();
        let n = fd(&z, 1e-5, |z| softmax_cross_entropy(z, 3).unwrap().0);
        assert!(rel(&g, &n) < 1e-6);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap().0, 0.5);
        let p = [0.3, -0.2, 1.5];
        let t = [0.1, 0.4, -0.7];
        let (_, g) = mse_loss(&p, &t).unwrap();
        let n = fd(&p, 1e-5, |p| mse_loss(p, &t).unwrap().0);
        assert!(rel(&g, &n) < 1e-8);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let p = softmax(&z);
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
