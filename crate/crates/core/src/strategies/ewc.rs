use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::model::{batch_objective, ComposedBatch, LossTerm, ModelSnapshot, Scalar, Segment};

/// Per-task importance weights and the parameters they anchor to.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBundle {
    pub task_id: usize,
    pub importance: Vec<f32>,
    pub anchor: Vec<f32>,
}

/// Empirical diagonal Fisher: mean over samples of the squared gradient of
/// the classification loss, one sample at a time, without dropout.
pub fn fisher_diagonal(model: &ModelSnapshot, samples: &[WindowSample]) -> Result<Vec<f64>> {
    let mut fisher = vec![0f64; model.n_params()];
    if samples.is_empty() {
        return Ok(fisher);
    }
    model.check_windows(samples)?;
    let mut grads = vec![0f32; model.n_params()];
    for w in samples {
        let unit = model
            .unit_of(w.label)
            .ok_or_else(|| Error::State(format!("label {} is not registered", w.label)))?;
        let batch = ComposedBatch {
            windows: vec![w.clone()],
            segments: vec![Segment {
                start: 0,
                len: 1,
                weight: 1.0,
                term: LossTerm::Classification { labels: vec![unit] },
            }],
        };
        grads.iter_mut().for_each(|g| *g = 0.0);
        batch_objective(&model.net, model.k(), &batch, None, &|_, _| 0.0, &mut grads);
        for (f, &g) in fisher.iter_mut().zip(&grads) {
            *f += (g as f64) * (g as f64);
        }
    }
    let n = samples.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    Ok(fisher)
}

pub fn ewc_after_task(
    model: &ModelSnapshot,
    task_data: &[WindowSample],
    bundles: &mut Vec<FisherBundle>,
    task_id: usize,
) -> Result<()> {
    let importance = fisher_diagonal(model, task_data)?;
    bundles.push(FisherBundle {
        task_id,
        importance: importance.into_iter().map(|f| f as f32).collect(),
        anchor: model.net.params.clone(),
    });
    Ok(())
}

fn check_shapes(n: usize, bundles: &[FisherBundle]) -> Result<()> {
    match bundles.iter().find(|b| b.importance.len() != n || b.anchor.len() != n) {
        Some(b) => Err(Error::State(format!(
            "bundle of task {} has {} importances and {} anchors for {n} parameters",
            b.task_id,
            b.importance.len(),
            b.anchor.len()
        ))),
        None => Ok(()),
    }
}

/// `lambda / 2 * sum_b sum_j F_bj (theta_j - anchor_bj)^2`
pub fn ewc_penalty(params: &[f32], bundles: &[FisherBundle], lambda: f64) -> Result<f64> {
    check_shapes(params.len(), bundles)?;
    let mut scratch = vec![0f32; params.len()];
    Ok(penalty_with_grad(params, bundles, lambda, &mut scratch))
}

/// Penalty value; adds its gradient to `grads`. Shapes must already match.
pub(crate) fn penalty_with_grad<T: Scalar>(params: &[T], bundles: &[FisherBundle], lambda: f64, grads: &mut [T]) -> f64 {
    let mut total = 0.0;
    for b in bundles {
        for ((j, &f), &a) in b.importance.iter().enumerate().zip(&b.anchor) {
            if f == 0.0 {
                continue;
            }
            let d = params[j].as_f64() - a as f64;
            total += f as f64 * d * d;
            grads[j] = grads[j] + T::of(lambda * f as f64 * d);
        }
    }
    0.5 * lambda * total
}

pub(crate) fn validate_bundles(n: usize, bundles: &[FisherBundle]) -> Result<()> {
    check_shapes(n, bundles)?;
    if bundles.iter().any(|b| b.importance.iter().any(|&f| f < 0.0 || !f.is_finite())) {
        return Err(Error::State("importance must be finite and nonnegative".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form() {
        let b = FisherBundle { task_id: 1, importance: vec![1.0; 3], anchor: vec![0.0; 3] };
        assert_eq!(ewc_penalty(&[0.0, 1.0, 0.0], std::slice::from_ref(&b), 2.0).unwrap(), 1.0);
        assert_eq!(ewc_penalty(&[0.0; 3], std::slice::from_ref(&b), 10.0).unwrap(), 0.0);
        assert_eq!(ewc_penalty(&[0.0; 3], &[], 10.0).unwrap(), 0.0);
        assert!(matches!(ewc_penalty(&[0.0; 2], &[b], 1.0), Err(Error::State(_))));
    }
}
