use super::Elem;
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Elem>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of a softmax over `logits` against class `label` (0-based).
///
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Elem>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    let loss = -(logits[label] - max - log_total);
    let mut grad = softmax(logits);
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

/// Mean squared error over the entries selected by `mask`.
///
/// Mask entries act as weights (normally 0 or 1); the mean divides by their
/// sum, and an all-zero mask yields zero loss and gradient.
pub fn mse_loss<T: Elem>(pred: &[T], target: &[T], mask: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            context: "mse loss",
            expected: vec![pred.len(), pred.len()],
            actual: vec![target.len(), mask.len()],
        });
    }
    let weight: T = mask.iter().copied().sum();
    if weight <= T::zero() {
        return Ok((T::zero(), vec![T::zero(); pred.len()]));
    }
    let mut loss = T::zero();
    let two = T::one() + T::one();
    let grad = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((&p, &t), &m)| {
            let d = p - t;
            loss = loss + m * d * d;
            two * m * d / weight
        })
        .collect();
    Ok((loss / weight, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.3f64; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[2] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits() {
        let (loss, _) = softmax_cross_entropy(&[100.0f32, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0f32; 3], 3).is_err());
    }

    #[test]
    fn shift_invariance() {
        let logits = [0.2f64, -1.3, 2.5, 0.7];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 37.5).collect();
        let (a, _) = softmax_cross_entropy(&logits, 1).unwrap();
        let (b, _) = softmax_cross_entropy(&shifted, 1).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss(&[1.0f64, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, _) = mse_loss(&[0.0f64, 0.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let (l, g) = mse_loss(&[5.0f64, -3.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (_, g) = mse_loss(&[5.0f64, -3.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(mse_loss(&[0.0f64], &[0.0, 1.0], &[1.0]).is_err());
    }
}
