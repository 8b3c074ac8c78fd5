//! Sensor-log ingestion, feature pruning and standardization, windowing and
//! per-session train/test splitting.

mod csv;
mod mask;
mod prepared;
mod synthetic;
mod window;

use std::sync::Arc;

pub use self::csv::{load_csv, load_csv_reader, CsvSchema};
pub use mask::{fit_feature_mask, standardize, FeatureMask};
pub use prepared::{Manifest, PrepareOptions, MANIFEST_FILE, MASK_FILE, PREPARED_FILE, PreparedDataset, PreparedSession, SessionCounts};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use window::{make_windows, split_session, train_count, SplitMode};

/// Data-window length and stride of the reference configuration.
pub const DEFAULT_WINDOW: usize = 60;
pub const DEFAULT_STRIDE: usize = 6;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

pub type DriverId = u32;

/// One drive: a `T x F` row-major matrix of records for a single
/// (driver, session) pair, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub driver_id: DriverId,
    pub session_id: u32,
    pub records: Vec<f64>,
    pub n_features: usize,
    pub start_index: usize,
}

impl SessionTrace {
    pub fn len(&self) -> usize {
        self.records.len().checked_div(self.n_features).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.records[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub sessions: Vec<SessionTrace>,
    pub feature_names: Vec<String>,
    /// Records per second.
    pub sample_rate: f64,
}

impl RawDataset {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn total_records(&self) -> usize {
        self.sessions.iter().map(SessionTrace::len).sum()
    }

    pub fn drivers(&self) -> Vec<DriverId> {
        let mut ids: Vec<_> = self.sessions.iter().map(|s| s.driver_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A `length x features` slice of a standardized session trace.
///
/// The values are shared with the trace they were cut from, so cloning a
/// window is cheap.
#[derive(Clone)]
pub struct WindowSample {
    data: Arc<[f32]>,
    offset: usize,
    pub length: usize,
    pub features: usize,
    pub label: DriverId,
    pub session_id: u32,
    /// Position of the window's first record within its session.
    pub index: usize,
}

impl WindowSample {
    pub(crate) fn new(
        data: Arc<[f32]>,
        length: usize,
        features: usize,
        label: DriverId,
        session_id: u32,
        index: usize,
    ) -> Self {
        let offset = index * features;
        assert!(offset + length * features <= data.len(), "window exceeds trace");
        Self {
            data,
            offset,
            length,
            features,
            label,
            session_id,
            index,
        }
    }

    /// Builds a standalone window from an owned matrix.
    pub fn from_values(values: Vec<f32>, length: usize, features: usize, label: DriverId, session_id: u32, index: usize) -> Self {
        assert_eq!(values.len(), length * features, "window matrix shape");
        Self {
            data: values.into(),
            offset: 0,
            length,
            features,
            label,
            session_id,
            index,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.data[self.offset..self.offset + self.length * self.features]
    }

    pub fn key(&self) -> WindowKey {
        WindowKey {
            driver: self.label,
            session: self.session_id,
            index: self.index,
        }
    }
}

impl std::fmt::Debug for WindowSample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WindowSample")
            .field("label", &self.label)
            .field("session_id", &self.session_id)
            .field("index", &self.index)
            .field("shape", &(self.length, self.features))
            .finish()
    }
}

impl PartialEq for WindowSample {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key() && self.values() == other.values()
    }
}

/// Identifies a window within a prepared dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct WindowKey {
    pub driver: DriverId,
    pub session: u32,
    pub index: usize,
}
