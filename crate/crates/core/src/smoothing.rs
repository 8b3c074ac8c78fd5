//! Causal rolling-window averaging of logits for streamed inference.

use std::collections::VecDeque;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 6;

/// Ring of the most recent logit vectors of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingState {
    pub window_size: usize,
    pub ring: VecDeque<Vec<f64>>,
    pub stream_id: Option<(u32, u32)>,
}

impl SmoothingState {
    pub fn new(window_size: usize) -> Self {
        assert!(window_size >= 1, "smoothing window must be at least 1");
        SmoothingState { window_size, ring: VecDeque::with_capacity(window_size), stream_id: None }
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.stream_id = None;
    }
}

/// Pushes `z` and returns the mean of the vectors now in the ring (fewer
/// than `window_size` during warm-up).
pub fn smooth(state: &mut SmoothingState, z: &[f64]) -> Result<Vec<f64>> {
    if let Some(prev) = state.ring.back() {
        if prev.len() != z.len() {
            return Err(Error::State(format!("logit width {} after width {}", z.len(), prev.len())));
        }
    }
    if state.ring.len() == state.window_size {
        state.ring.pop_front();
    }
    state.ring.push_back(z.to_vec());
    let n = state.ring.len() as f64;
    let mut mean = vec![0.0; z.len()];
    for v in &state.ring {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Index of the most confident class. Sigmoid is monotone, so this is the
/// argmax of the logits themselves; ties go to the lowest index.
pub fn decide<T: Into<f64> + Copy>(z: &[T]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in z.iter().enumerate() {
        let v = v.into();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j).ok_or_else(|| Error::State("cannot decide on an empty logit vector".into()))
}

/// Smoothed predictions (output-unit indices) for precomputed logits of
/// `windows`, restarting the smoother at every session.
pub fn smooth_predictions(windows: &[WindowSample], logits: &[f32], k: usize, window_size: usize) -> Result<Vec<usize>> {
    if logits.len() != windows.len() * k {
        return Err(Error::Shape(format!("{} logits for {} windows of width {k}", logits.len(), windows.len())));
    }
    let mut state = SmoothingState::new(window_size);
    let mut last_index = 0;
    let mut out = Vec::with_capacity(windows.len());
    for (w, z) in windows.iter().zip(logits.chunks(k.max(1))) {
        let stream = (w.label, w.session_id);
        if state.stream_id != Some(stream) {
            state.reset();
            state.stream_id = Some(stream);
        } else if w.index < last_index {
            return Err(Error::Protocol(format!(
                "window {} follows window {last_index} in session {} of driver {}",
                w.index, w.session_id, w.label
            )));
        }
        last_index = w.index;
        let zf: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        out.push(decide(&smooth(&mut state, &zf)?)?);
    }
    Ok(out)
}

/// Runs the model over session-ordered windows and smooths per session.
/// Returns predicted driver ids.
pub fn smoothed_eval(model: &ModelSnapshot, windows: &[WindowSample], window_size: usize) -> Result<Vec<u32>> {
    let logits = model.predict_logits(windows)?;
    let units = smooth_predictions(windows, &logits, model.k(), window_size)?;
    Ok(units.into_iter().map(|u| model.active_classes[u]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_examples() {
        assert_eq!(decide(&[2.0, -1.0, 0.3]).unwrap(), 0);
        assert_eq!(decide(&[0.5, 1.5, 1.5]).unwrap(), 1);
        assert!(decide::<f64>(&[]).is_err());
    }

    #[test]
    fn outlier_suppressed() {
        let mut s = SmoothingState::new(6);
        for _ in 0..6 {
            smooth(&mut s, &[6.0, 0.0]).unwrap();
        }
        let z = smooth(&mut s, &[0.0, 6.0]).unwrap();
        assert_eq!(z, vec![5.0, 1.0]);
        assert_eq!(decide(&z).unwrap(), 0);
        assert!(smooth(&mut s, &[1.0]).is_err());
    }

    #[test]
    fn constant_stream_is_fixed_point() {
        let mut s = SmoothingState::new(3);
        for _ in 0..10 {
            assert_eq!(smooth(&mut s, &[0.25, -2.0]).unwrap(), vec![0.25, -2.0]);
        }
    }

    #[test]
    fn unordered_session_rejected() {
        let w = |i| WindowSample::from_values(vec![0.0], 1, 1, 0, 1, i);
        let windows = [w(6), w(0)];
        let err = smooth_predictions(&windows, &[1.0, 1.0], 1, 6).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }
}
