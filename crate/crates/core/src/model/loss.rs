//! Loss terms over a `rows x k` logit matrix. Each returns the scalar loss
//! and writes `weight * dloss/dlogits` into the matching rows of a gradient
//! buffer.

use super::scalar::{sigmoid, Scalar};
use crate::error::{Error, Result};

/// Per-class sigmoid binary cross-entropy against one-hot targets, averaged
/// over rows and classes.
pub fn bce_one_hot<T: Scalar>(logits: &[T], k: usize, labels: &[usize], weight: f64, dlogits: &mut [T]) -> f64 {
    let rows = labels.len();
    assert_eq!(logits.len(), rows * k);
    if rows == 0 || k == 0 {
        return 0.0;
    }
    let scale = weight / (rows * k) as f64;
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        for j in 0..k {
            let z = logits[r * k + j];
            let y = if j == label { 1.0 } else { 0.0 };
            let zf = z.as_f64();
            total += zf.max(0.0) - zf * y + (-zf.abs()).exp().ln_1p();
            let g = (sigmoid(z) - T::of(y)) * T::of(scale);
            dlogits[r * k + j] = dlogits[r * k + j] + g;
        }
    }
    total / (rows * k) as f64
}

/// Mean over rows of the per-row mean squared error against `targets[r]`,
/// which covers the first `targets[r].len()` logits of row `r`.
pub fn logit_mse<T: Scalar>(logits: &[T], k: usize, targets: &[Vec<f32>], weight: f64, dlogits: &mut [T]) -> f64 {
    let rows = targets.len();
    assert_eq!(logits.len(), rows * k);
    if rows == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let w = target.len();
        assert!(w <= k, "stored logits wider than the active head");
        if w == 0 {
            continue;
        }
        let scale = T::of(weight * 2.0 / (rows * w) as f64);
        let mut row_sum = 0.0;
        for (j, &t) in target.iter().enumerate() {
            let diff = logits[r * k + j] - T::of_f32(t);
            row_sum += diff.as_f64() * diff.as_f64();
            dlogits[r * k + j] = dlogits[r * k + j] + diff * scale;
        }
        total += row_sum / w as f64;
    }
    total / rows as f64
}

/// Classification loss of the model head: sigmoid BCE averaged over the
/// batch and the `k` active classes.
pub fn classification_loss(logits: &[f32], k: usize, labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() * k {
        return Err(Error::Shape(format!(
            "{} logits for {} labels and {k} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index(format!("label {bad} outside {k} active classes")));
    }
    let mut scratch = vec![0f32; logits.len()];
    Ok(bce_one_hot(logits, k, labels, 1.0, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_ln2() {
        let loss = classification_loss(&[0.0, 0.0, 0.0, 0.0], 2, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let loss = classification_loss(&[40.0, -40.0, -40.0], 3, &[0]).unwrap();
        assert!(loss < 1e-15);
    }

    #[test]
    fn out_of_range_label_is_index_error() {
        assert!(matches!(classification_loss(&[0.0, 0.0], 2, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn mse_constant_offset() {
        let logits = [1.5f64, 2.5, -0.5, 0.5];
        let targets = vec![vec![1.0f32, 2.0], vec![-1.0, 0.0]];
        let mut d = [0.0; 4];
        let loss = logit_mse(&logits, 2, &targets, 1.0, &mut d);
        assert!((loss - 0.25).abs() < 1e-12);
        assert!(d.iter().all(|&g| (g - 0.25).abs() < 1e-12));
    }
}
