//! Sequence classifier: a stacked LSTM over each window with a fixed-width
//! linear head on the final hidden state, plus its training loop.

mod adam;
pub mod loss;
mod network;
mod scalar;
mod snapshot;
mod train;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::classification_loss;
pub use network::{param_count, param_index, time_major, Dims, ForwardCache, Network, ParamSpec};
pub use scalar::Scalar;
pub use snapshot::{init_model, ModelSnapshot, CHECKPOINT_VERSION};
pub use train::{batch_objective, train_task, train_task_with, ComposedBatch, LossTerm, Segment, TrainingLog};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_features: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden_size: usize,
    #[serde(default = "defaults::layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    pub max_classes: usize,
    #[serde(default = "defaults::lr")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs_per_task: usize,
    /// Stop a task after this many epochs without validation improvement.
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
}

pub(crate) mod defaults {
    pub fn hidden() -> usize {
        128
    }
    pub fn layers() -> usize {
        2
    }
    pub fn dropout() -> f64 {
        0.5
    }
    pub fn lr() -> f64 {
        0.001
    }
    pub fn batch() -> usize {
        32
    }
    pub fn epochs() -> usize {
        50
    }
}

impl ClassifierConfig {
    /// Reference recipe for `input_features` inputs and `max_classes` drivers.
    pub fn reference(input_features: usize, max_classes: usize) -> Self {
        Self {
            input_features,
            hidden_size: defaults::hidden(),
            num_layers: defaults::layers(),
            dropout: defaults::dropout(),
            max_classes,
            learning_rate: defaults::lr(),
            batch_size: defaults::batch(),
            epochs_per_task: defaults::epochs(),
            early_stopping_patience: None,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.input_features,
            hidden: self.hidden_size,
            layers: self.num_layers,
            classes: self.max_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_features", self.input_features),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("max_classes", self.max_classes),
            ("batch_size", self.batch_size),
            ("epochs_per_task", self.epochs_per_task),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::Config("early_stopping_patience must be positive".into()));
        }
        Ok(())
    }
}
