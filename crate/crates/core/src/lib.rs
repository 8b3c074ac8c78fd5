//! Continual-learning benchmark for behavior-based driver identification.
//!
//! The crate covers the whole experimental pipeline: sensor-log ingestion
//! and windowing ([`data`]), incremental-driver task streams
//! ([`scenarios`]), a two-layer LSTM classifier with hand-written
//! backpropagation ([`model`]), the rehearsal and regularization strategies
//! ([`strategies`]), causal logit smoothing at inference time
//! ([`smoothing`]), and the evaluation protocol with its experiment runner
//! ([`eval`]).

pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod scenarios;
pub mod smoothing;
pub mod strategies;

pub use error::{Error, Result};
