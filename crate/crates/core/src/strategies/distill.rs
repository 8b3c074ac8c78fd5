use crate::error::{Error, Result};
use crate::model::classification_loss;

/// `lambda` times the mean squared difference over every entry of the
/// `B x k_old` student and teacher logits.
pub fn lwf_loss(student_logits: &[f32], teacher_logits: &[f32], lambda: f64) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::Shape(format!(
            "{} student logits against {} teacher logits",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    if student_logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = student_logits
        .iter()
        .zip(teacher_logits)
        .map(|(&s, &t)| {
            let d = s as f64 - t as f64;
            d * d
        })
        .sum();
    Ok(lambda * sum / student_logits.len() as f64)
}

/// Mean over rows of the per-row squared error on the stored-logit prefix.
pub fn stored_logit_mse(logits: &[f32], k: usize, stored: &[Vec<f32>]) -> Result<f64> {
    if logits.len() != stored.len() * k {
        return Err(Error::Shape(format!("{} logits for {} rows of width {k}", logits.len(), stored.len())));
    }
    if stored.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, target) in logits.chunks(k.max(1)).zip(stored) {
        if target.len() > k {
            return Err(Error::Shape(format!("stored width {} exceeds {k} active classes", target.len())));
        }
        if target.is_empty() {
            continue;
        }
        let sq: f64 = row.iter().zip(target).map(|(&z, &t)| (z as f64 - t as f64).powi(2)).sum();
        total += sq / target.len() as f64;
    }
    Ok(total / stored.len() as f64)
}

/// Dark-experience replay objective: the current-batch loss plus `alpha`
/// times the logit regression on one memory draw plus `beta` times the
/// classification loss on a second draw. Empty draws contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn derpp_loss(
    current_loss: f64,
    logit_batch: &[f32],
    stored_logits: &[Vec<f32>],
    label_batch: &[f32],
    stored_labels: &[usize],
    k: usize,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let mut total = current_loss;
    if !stored_logits.is_empty() {
        total += alpha * stored_logit_mse(logit_batch, k, stored_logits)?;
    }
    if !stored_labels.is_empty() {
        total += beta * classification_loss(label_batch, k, stored_labels)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lwf_closed_forms() {
        let t = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(lwf_loss(&t, &t, 5.0).unwrap(), 0.0);
        let s: Vec<f32> = t.iter().map(|v| v + 0.5).collect();
        assert!((lwf_loss(&s, &t, 1.0).unwrap() - 0.25).abs() < 1e-7);
        assert!(lwf_loss(&s[..3], &t, 1.0).is_err());
    }

    #[test]
    fn derpp_limits() {
        let z = [1.0, -1.0, 0.5, 0.2];
        let total = derpp_loss(0.7, &z, &[vec![1.0, -1.0], vec![0.5, 0.2]], &z, &[0, 1], 2, 0.0, 0.0).unwrap();
        assert_eq!(total, 0.7);
        let frozen = derpp_loss(0.7, &z, &[vec![1.0, -1.0], vec![0.5, 0.2]], &[], &[], 2, 1.0, 1.0).unwrap();
        assert_eq!(frozen, 0.7);
    }
}
