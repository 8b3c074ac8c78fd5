//! Accuracy, gap, timing and memory metrics, and the experiment runner.

mod config;
mod report;
mod runner;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DatasetSource, ExperimentConfig, ModelSection, ScenarioConfig, SmoothingConfig};
pub use report::{
    aggregate, comparison_csv, comparison_table, trace_csv, AggregateReport, CellSummary, RunKey, RunReport, TaskRecord,
};
pub use runner::{build_stream, load_dataset, resume_experiment, run_experiment, run_single, RunOptions, RunLayout};

use crate::data::{DriverId, WindowSample};
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;
use crate::smoothing::{decide, smooth_predictions};
use crate::strategies::Strategy;

/// One evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub driver: DriverId,
    pub session: u32,
    pub index: usize,
    pub predicted: DriverId,
    pub smoothed: Option<DriverId>,
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Fraction in `[0, 1]` of raw argmax predictions that are correct.
    pub accuracy: f64,
    /// Same for smoothed predictions, when requested.
    pub smoothed_accuracy: Option<f64>,
    pub per_driver: BTreeMap<DriverId, f64>,
    pub smoothed_per_driver: Option<BTreeMap<DriverId, f64>>,
    pub trace: Vec<TraceRow>,
    /// Time spent smoothing, on top of computing the raw logits.
    pub smoothing_seconds: f64,
}

fn per_driver(truth: &[DriverId], predicted: &[DriverId]) -> BTreeMap<DriverId, f64> {
    let mut counts: BTreeMap<DriverId, (usize, usize)> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        let c = counts.entry(t).or_default();
        c.0 += (t == p) as usize;
        c.1 += 1;
    }
    counts.into_iter().map(|(d, (ok, n))| (d, ok as f64 / n as f64)).collect()
}

fn micro(truth: &[DriverId], predicted: &[DriverId]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(predicted).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

/// Micro-averaged accuracy over `windows`, which must be grouped by session
/// in ascending window order when `smoothing_window` is given.
pub fn evaluate(model: &ModelSnapshot, windows: &[WindowSample], smoothing_window: Option<usize>) -> Result<Evaluation> {
    if let Some(w) = windows.iter().find(|w| model.unit_of(w.label).is_none()) {
        return Err(Error::Protocol(format!("evaluation label {} is not registered", w.label)));
    }
    let k = model.k();
    let logits = model.predict_logits(windows)?;
    let truth: Vec<DriverId> = windows.iter().map(|w| w.label).collect();
    let predicted = logits
        .chunks(k.max(1))
        .map(|z| decide(z).map(|u| model.active_classes[u]))
        .collect::<Result<Vec<_>>>()?;
    let (smoothed, smoothing_seconds) = match smoothing_window {
        Some(size) => {
            let (units, secs) = time_task(|| smooth_predictions(windows, &logits, k, size));
            (Some(units?.into_iter().map(|u| model.active_classes[u]).collect::<Vec<_>>()), secs)
        }
        None => (None, 0.0),
    };
    let trace = windows
        .iter()
        .enumerate()
        .map(|(i, w)| TraceRow {
            driver: w.label,
            session: w.session_id,
            index: w.index,
            predicted: predicted[i],
            smoothed: smoothed.as_ref().map(|s| s[i]),
            logits: logits[i * k..(i + 1) * k].to_vec(),
        })
        .collect();
    Ok(Evaluation {
        accuracy: micro(&truth, &predicted),
        smoothed_accuracy: smoothed.as_ref().map(|s| micro(&truth, s)),
        per_driver: per_driver(&truth, &predicted),
        smoothed_per_driver: smoothed.as_ref().map(|s| per_driver(&truth, s)),
        trace,
        smoothing_seconds,
    })
}

/// Percentage points by which `final_acc` trails the joint reference.
pub fn compute_gap(final_acc: f64, joint_acc: f64) -> f64 {
    joint_acc - final_acc
}

/// Past-task storage of `strategy` for windows of `window x features`.
pub fn account_strategy_bytes(
    strategy: &Strategy,
    window: usize,
    features: usize,
    max_classes: usize,
    n_params: usize,
) -> u64 {
    strategy.state_bytes(window, features, max_classes, n_params)
}

/// Runs `thunk` and reports its wall-clock duration in seconds.
pub fn time_task<R>(thunk: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = thunk();
    (out, start.elapsed().as_secs_f64())
}

/// Accuracy after each task on that task's evaluation set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub values: Vec<f64>,
    pub per_driver: Vec<BTreeMap<DriverId, f64>>,
}

impl AccuracyMatrix {
    pub fn push(&mut self, value: f64, per_driver: BTreeMap<DriverId, f64>) {
        self.values.push(value);
        self.per_driver.push(per_driver);
    }

    pub fn final_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let drivers: Vec<DriverId> = self
            .per_driver
            .iter()
            .flat_map(|m| m.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = String::from("task,accuracy");
        for d in &drivers {
            out.push_str(&format!(",driver_{d}"));
        }
        out.push('\n');
        for (t, (v, m)) in self.values.iter().zip(&self.per_driver).enumerate() {
            out.push_str(&format!("{},{v}", t + 1));
            for d in &drivers {
                match m.get(d) {
                    Some(a) => out.push_str(&format!(",{a}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert!((compute_gap(90.47, 99.40) - 8.93).abs() < 1e-9);
        assert!((compute_gap(97.21, 99.40) - 2.19).abs() < 1e-9);
        assert_eq!(compute_gap(99.40, 99.40), 0.0);
    }

    #[test]
    fn noop_timing() {
        let ((), secs) = time_task(|| ());
        assert!((0.0..0.01).contains(&secs));
    }

    #[test]
    fn stats() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(std_dev(&[4.0]), 0.0);
    }
}
