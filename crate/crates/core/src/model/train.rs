use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::loss::{bce_one_hot, logit_mse};
use super::network::{time_major, Network};
use super::{Adam, ModelSnapshot, Scalar};
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::strategies::Strategy;

#[derive(Debug, Clone, PartialEq)]
pub enum LossTerm {
    /// Sigmoid BCE against one-hot targets; labels are output-unit indices.
    Classification { labels: Vec<usize> },
    /// Squared error against per-row target logits, each covering a prefix
    /// of the active units.
    LogitRegression { targets: Vec<Vec<f32>> },
}

/// A weighted loss term over a contiguous range of batch rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub weight: f64,
    pub term: LossTerm,
}

/// Rows of one optimization step and the loss terms defined over them.
/// Terms may overlap rows; their gradients add.
#[derive(Debug, Clone, Default)]
pub struct ComposedBatch {
    pub windows: Vec<WindowSample>,
    pub segments: Vec<Segment>,
}

impl ComposedBatch {
    /// Appends rows and returns the index of the first.
    pub fn push_rows(&mut self, rows: impl IntoIterator<Item = WindowSample>) -> usize {
        let start = self.windows.len();
        self.windows.extend(rows);
        start
    }

    pub fn labels_of(&self, model: &ModelSnapshot, start: usize, len: usize) -> Result<Vec<usize>> {
        self.windows[start..start + len]
            .iter()
            .map(|w| {
                model
                    .unit_of(w.label)
                    .ok_or_else(|| Error::State(format!("label {} is not registered", w.label)))
            })
            .collect()
    }
}

/// Total loss of `batch` plus a parameter-space penalty; accumulates the
/// gradient into `grads`.
pub fn batch_objective<T: Scalar>(
    net: &Network<T>,
    k: usize,
    batch: &ComposedBatch,
    dropout: Option<(f64, &mut Rng)>,
    penalty: &dyn Fn(&[T], &mut [T]) -> f64,
    grads: &mut [T],
) -> f64 {
    let mut total = penalty(&net.params, grads);
    if batch.windows.is_empty() {
        return total;
    }
    let steps = batch.windows[0].length;
    let features = batch.windows[0].features;
    let views: Vec<&[f32]> = batch.windows.iter().map(WindowSample::values).collect();
    let x = time_major::<T>(&views, steps, features);
    let rows = batch.windows.len();
    let (logits, cache) = net.forward(&x, rows, steps, k, dropout);
    let mut dlogits = vec![T::zero(); rows * k];
    for seg in &batch.segments {
        let range = seg.start * k..(seg.start + seg.len) * k;
        let (z, dz) = (&logits[range.clone()], &mut dlogits[range]);
        total += seg.weight
            * match &seg.term {
                LossTerm::Classification { labels } => bce_one_hot(z, k, labels, seg.weight, dz),
                LossTerm::LogitRegression { targets } => logit_mse(z, k, targets, seg.weight, dz),
            };
    }
    net.backward(&cache, &dlogits, grads);
    total
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
    pub batches_per_epoch: usize,
    pub rows_processed: usize,
    pub wall_time_s: f64,
    /// Epoch whose parameters were kept when early stopping is active.
    pub best_epoch: Option<usize>,
}

pub fn train_task(
    model: &mut ModelSnapshot,
    task_data: &[WindowSample],
    strategy: &Strategy,
    rng_seed: u64,
) -> Result<TrainingLog> {
    train_task_with(model, task_data, strategy, rng_seed, None)
}

/// Mini-batch Adam over `epochs_per_task` epochs; optimizer moments start
/// fresh. With a validation set and a patience in the config, training
/// stops early and keeps the best-validating parameters.
pub fn train_task_with(
    model: &mut ModelSnapshot,
    task_data: &[WindowSample],
    strategy: &Strategy,
    rng_seed: u64,
    validation: Option<&[WindowSample]>,
) -> Result<TrainingLog> {
    let started = Instant::now();
    if task_data.is_empty() {
        return Err(Error::Config("task has no training windows".into()));
    }
    if let Some(w) = task_data.iter().find(|w| model.unit_of(w.label).is_none()) {
        return Err(Error::State(format!("label {} is not registered", w.label)));
    }
    model.check_windows(task_data)?;
    let cfg = model.config.clone();
    let mut rng = Rng::seed_from_u64(rng_seed);
    let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
    let mut grads = vec![0f32; model.n_params()];
    let share = strategy.current_share(cfg.batch_size).max(1);
    let mut log = TrainingLog {
        batches_per_epoch: task_data.len().div_ceil(share),
        ..Default::default()
    };
    let early = validation.zip(cfg.early_stopping_patience).filter(|(v, _)| !v.is_empty());
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let penalty = |p: &[f32], g: &mut [f32]| strategy.param_penalty(p, g);

    let mut order: Vec<usize> = (0..task_data.len()).collect();
    for epoch in 0..cfg.epochs_per_task {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(share) {
            let current: Vec<WindowSample> = chunk.iter().map(|&i| task_data[i].clone()).collect();
            let mut batch = strategy.compose_batch(model, current, cfg.batch_size, &mut rng)?;
            strategy.auxiliary_loss(model, &mut batch, &mut rng)?;
            grads.iter_mut().for_each(|g| *g = 0.0);
            let k = model.k();
            let loss = batch_objective(&model.net, k, &batch, Some((cfg.dropout, &mut rng)), &penalty, &mut grads);
            if !loss.is_finite() {
                return Err(Error::State(format!("loss diverged at epoch {}", epoch + 1)));
            }
            adam.update(&mut model.net.params, &grads);
            epoch_loss += loss;
            log.rows_processed += batch.windows.len();
        }
        log.epoch_losses.push(epoch_loss / log.batches_per_epoch as f64);

        if let Some((val, patience)) = early {
            let acc = accuracy(model, val)?;
            match &best {
                Some((b, _, _)) if acc <= *b => {}
                _ => best = Some((acc, epoch, model.net.params.clone())),
            }
            if let Some((_, best_epoch, _)) = &best {
                if epoch - best_epoch >= patience {
                    break;
                }
            }
        }
    }
    if let Some((_, epoch, params)) = best {
        model.net.params = params;
        log.best_epoch = Some(epoch);
    }
    log.wall_time_s = started.elapsed().as_secs_f64();
    Ok(log)
}

fn accuracy(model: &ModelSnapshot, windows: &[WindowSample]) -> Result<f64> {
    let logits = model.predict_logits(windows)?;
    let k = model.k();
    let correct = windows
        .iter()
        .zip(logits.chunks(k))
        .filter(|(w, z)| model.active_classes[crate::smoothing::decide(z).unwrap_or(0)] == w.label)
        .count();
    Ok(correct as f64 / windows.len() as f64)
}
