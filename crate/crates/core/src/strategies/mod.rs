//! Continual-learning strategies as hooks around the per-task training loop.

mod distill;
mod ewc;
mod replay;
mod state;

use serde::{Deserialize, Serialize};

pub use distill::{derpp_loss, lwf_loss, stored_logit_mse};
pub use ewc::{ewc_after_task, ewc_penalty, fisher_diagonal, FisherBundle};
pub use replay::{current_share, er_compose_batch, er_insert, replay_share, ReplayEntry, ReplayMemory};
pub use state::STATE_VERSION;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::model::{ComposedBatch, LossTerm, ModelSnapshot, Scalar, Segment};
use crate::rng::Rng;
use crate::scenarios::Task;

mod defaults {
    pub fn memory() -> usize {
        1000
    }
    pub fn ratio() -> f64 {
        0.5
    }
    pub fn ewc_lambda() -> f64 {
        10_000.0
    }
    pub fn lwf_lambda() -> f64 {
        5.0
    }
    pub fn one() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    Joint,
    Cumulative,
    FineTune,
    Er {
        #[serde(default = "defaults::memory")]
        memory_size: usize,
        #[serde(default = "defaults::ratio")]
        replay_ratio: f64,
    },
    Ewc {
        #[serde(default = "defaults::ewc_lambda")]
        lambda: f64,
    },
    Lwf {
        #[serde(default = "defaults::lwf_lambda")]
        lambda: f64,
    },
    Derpp {
        #[serde(default = "defaults::memory")]
        memory_size: usize,
        #[serde(default = "defaults::one")]
        alpha: f64,
        #[serde(default = "defaults::one")]
        beta: f64,
    },
}

impl StrategyConfig {
    pub fn er() -> Self {
        StrategyConfig::Er { memory_size: defaults::memory(), replay_ratio: defaults::ratio() }
    }

    pub fn ewc() -> Self {
        StrategyConfig::Ewc { lambda: defaults::ewc_lambda() }
    }

    pub fn lwf() -> Self {
        StrategyConfig::Lwf { lambda: defaults::lwf_lambda() }
    }

    pub fn derpp() -> Self {
        StrategyConfig::Derpp { memory_size: defaults::memory(), alpha: 1.0, beta: 1.0 }
    }

    /// All seven strategies with their reference hyperparameters.
    pub fn all() -> Vec<Self> {
        vec![
            StrategyConfig::Joint,
            StrategyConfig::Cumulative,
            StrategyConfig::FineTune,
            Self::er(),
            Self::ewc(),
            Self::lwf(),
            Self::derpp(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Joint => "Joint",
            StrategyConfig::Cumulative => "Cumulative",
            StrategyConfig::FineTune => "Fine-Tuning",
            StrategyConfig::Er { .. } => "ER",
            StrategyConfig::Ewc { .. } => "EWC",
            StrategyConfig::Lwf { .. } => "LwF",
            StrategyConfig::Derpp { .. } => "DER++",
        }
    }

    /// Name of the smoothed-inference variant, for the strategies that have one.
    pub fn smoothed_name(&self) -> Option<&'static str> {
        match self {
            StrategyConfig::Er { .. } => Some("SmooER"),
            StrategyConfig::Derpp { .. } => Some("SmooDER"),
            _ => None,
        }
    }

    /// Whether every task retrains a freshly initialized model.
    pub fn from_scratch(&self) -> bool {
        matches!(self, StrategyConfig::Joint | StrategyConfig::Cumulative)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{}: {what}", self.name())));
        match *self {
            StrategyConfig::Er { replay_ratio, .. } if !(0.0..1.0).contains(&replay_ratio) => {
                bad("replay_ratio must lie in [0, 1)")
            }
            StrategyConfig::Ewc { lambda } | StrategyConfig::Lwf { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                bad("lambda must be finite and nonnegative")
            }
            StrategyConfig::Derpp { alpha, beta, .. }
                if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) =>
            {
                bad("alpha and beta must be finite and nonnegative")
            }
            _ => Ok(()),
        }
    }
}

/// A strategy and the state it accumulates over one task stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub config: StrategyConfig,
    /// Training windows of completed tasks (from-scratch strategies).
    pub stored: Vec<WindowSample>,
    pub memory: Option<ReplayMemory>,
    pub bundles: Vec<FisherBundle>,
    pub teacher: Option<ModelSnapshot>,
}

pub fn finetune_hooks() -> Strategy {
    Strategy::new(StrategyConfig::FineTune)
}

pub fn cumulative_hooks() -> Strategy {
    Strategy::new(StrategyConfig::Cumulative)
}

impl Strategy {
    pub fn new(config: StrategyConfig) -> Self {
        let memory = match config {
            StrategyConfig::Er { memory_size, .. } | StrategyConfig::Derpp { memory_size, .. } => {
                Some(ReplayMemory::new(memory_size))
            }
            _ => None,
        };
        Strategy { config, stored: Vec::new(), memory, bundles: Vec::new(), teacher: None }
    }

    pub fn name(&self) -> &'static str {
        self.config.name()
    }

    fn memory_is_empty(&self) -> bool {
        self.memory.as_ref().is_none_or(ReplayMemory::is_empty)
    }

    /// Prepares the model for `task` and returns the windows to train on.
    /// From-scratch strategies reset the model and train on everything seen.
    pub fn before_task(&mut self, model: &mut ModelSnapshot, task: &Task) -> Vec<WindowSample> {
        if self.config.from_scratch() {
            model.reset();
            let mut data = self.stored.clone();
            data.extend(task.train_windows.iter().cloned());
            data
        } else {
            task.train_windows.clone()
        }
    }

    /// Rows per step taken from the task's own data.
    pub fn current_share(&self, batch_size: usize) -> usize {
        match self.config {
            StrategyConfig::Er { replay_ratio, .. } if !self.memory_is_empty() => current_share(batch_size, replay_ratio),
            _ => batch_size,
        }
    }

    pub fn compose_batch(
        &self,
        model: &ModelSnapshot,
        current: Vec<WindowSample>,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<ComposedBatch> {
        let windows = match (&self.config, &self.memory) {
            (StrategyConfig::Er { replay_ratio, .. }, Some(memory)) => {
                er_compose_batch(memory, &current, batch_size, *replay_ratio, rng)
            }
            _ => current,
        };
        let mut batch = ComposedBatch { windows, segments: Vec::new() };
        let n = batch.windows.len();
        let labels = batch.labels_of(model, 0, n)?;
        batch.segments.push(Segment { start: 0, len: n, weight: 1.0, term: LossTerm::Classification { labels } });
        Ok(batch)
    }

    /// Adds the strategy's extra loss terms (and any rows they need) to a
    /// composed batch whose first segment covers the current rows.
    pub fn auxiliary_loss(&self, model: &ModelSnapshot, batch: &mut ComposedBatch, rng: &mut Rng) -> Result<()> {
        match self.config {
            StrategyConfig::Lwf { lambda } => {
                let Some(teacher) = &self.teacher else { return Ok(()) };
                let n = batch.windows.len();
                let k_old = teacher.k();
                let z = teacher.predict_logits(&batch.windows)?;
                let targets = z.chunks(k_old.max(1)).map(<[f32]>::to_vec).collect();
                batch.segments.push(Segment { start: 0, len: n, weight: lambda, term: LossTerm::LogitRegression { targets } });
            }
            StrategyConfig::Derpp { alpha, beta, .. } => {
                let Some(memory) = self.memory.as_ref().filter(|m| !m.is_empty()) else { return Ok(()) };
                let draw = replay_share(model.config.batch_size, 0.5).max(1);
                let picks = memory.draw(draw, rng);
                let targets = picks
                    .iter()
                    .map(|e| e.logits.clone().ok_or_else(|| Error::State("replay entry has no stored logits".into())))
                    .collect::<Result<Vec<_>>>()?;
                let start = batch.push_rows(picks.into_iter().map(|e| e.window.clone()));
                batch.segments.push(Segment { start, len: draw, weight: alpha, term: LossTerm::LogitRegression { targets } });

                let picks = memory.draw(draw, rng);
                let start = batch.push_rows(picks.into_iter().map(|e| e.window.clone()));
                let labels = batch.labels_of(model, start, draw)?;
                batch.segments.push(Segment { start, len: draw, weight: beta, term: LossTerm::Classification { labels } });
            }
            _ => {}
        }
        Ok(())
    }

    /// Parameter-space regularizer; adds its gradient to `grads`.
    pub fn param_penalty<T: Scalar>(&self, params: &[T], grads: &mut [T]) -> f64 {
        match self.config {
            StrategyConfig::Ewc { lambda } => ewc::penalty_with_grad(params, &self.bundles, lambda, grads),
            _ => 0.0,
        }
    }

    /// Updates strategy state once the model has finished `task`.
    pub fn after_task(&mut self, model: &ModelSnapshot, task: &Task, rng: &mut Rng) -> Result<()> {
        match self.config {
            StrategyConfig::Joint | StrategyConfig::Cumulative => self.stored.extend(task.train_windows.iter().cloned()),
            StrategyConfig::FineTune => {}
            StrategyConfig::Er { .. } | StrategyConfig::Derpp { .. } => {
                let source = matches!(self.config, StrategyConfig::Derpp { .. }).then_some(model);
                let memory = self.memory.as_mut().expect("replay strategies own a memory");
                er_insert(memory, &task.train_windows, task.task_id, source, rng)?;
            }
            StrategyConfig::Ewc { .. } => ewc_after_task(model, &task.train_windows, &mut self.bundles, task.task_id)?,
            StrategyConfig::Lwf { .. } => self.teacher = Some(model.clone()),
        }
        Ok(())
    }

    /// Bytes of past-task state: replay slots at 4-byte floats, 8-byte
    /// labels and (when stored) `max_classes` 4-byte logits; two vectors
    /// per Fisher bundle; the teacher's parameters; or every stored window.
    pub fn state_bytes(&self, window: usize, features: usize, max_classes: usize, n_params: usize) -> u64 {
        let window_bytes = (window * features * 4) as u64;
        match self.config {
            StrategyConfig::FineTune => 0,
            StrategyConfig::Joint | StrategyConfig::Cumulative => self.stored.len() as u64 * (window_bytes + 8),
            StrategyConfig::Er { memory_size, .. } => memory_size as u64 * (window_bytes + 8),
            StrategyConfig::Derpp { memory_size, .. } => memory_size as u64 * (window_bytes + 8 + 4 * max_classes as u64),
            StrategyConfig::Ewc { .. } => self.bundles.len() as u64 * 2 * n_params as u64 * 4,
            StrategyConfig::Lwf { .. } => self.teacher.as_ref().map_or(0, |_| n_params as u64 * 4),
        }
    }
}
