use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::window::cut_windows;
use super::{
    fit_feature_mask, make_windows, split_session, standardize, DriverId, FeatureMask, RawDataset, SplitMode,
    WindowKey, WindowSample, DEFAULT_STRIDE, DEFAULT_TRAIN_FRACTION, DEFAULT_WINDOW,
};
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DCLDATA\0";
const VERSION: u32 = 1;

pub const PREPARED_FILE: &str = "prepared.bin";
pub const MASK_FILE: &str = "feature_mask.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareOptions {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split: SplitMode,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_stride() -> usize {
    DEFAULT_STRIDE
}
fn default_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            split: SplitMode::Chronological,
        }
    }
}

impl PrepareOptions {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window length and stride must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PreparedSession {
    pub driver_id: DriverId,
    pub session_id: u32,
    pub n_records: usize,
    data: Arc<[f32]>,
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Per-session window counts, the analogue of the reference dataset's
/// train/test table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounts {
    pub driver: DriverId,
    pub session: u32,
    pub records: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_hash: String,
    pub options: PrepareOptions,
    pub raw_features: usize,
    pub feature_names: Vec<String>,
    pub sessions: Vec<SessionCounts>,
}

/// Standardized, windowed and split dataset.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub options: PrepareOptions,
    pub mask: FeatureMask,
    /// Names of the retained features.
    pub feature_names: Vec<String>,
    pub sessions: Vec<PreparedSession>,
    hash: String,
    lookup: HashMap<(DriverId, u32), usize>,
}

impl PreparedDataset {
    /// Windows and splits every session, fits the mask on the rows covered by
    /// training windows only, then standardizes all sessions with it.
    pub fn prepare(raw: &RawDataset, options: PrepareOptions) -> Result<Self> {
        options.validate()?;
        let f_raw = raw.n_features();
        if let Some(bad) = raw.sessions.iter().find(|s| s.n_features != f_raw) {
            return Err(Error::Shape(format!(
                "session ({}, {}) has {} features, dataset has {f_raw}",
                bad.driver_id, bad.session_id, bad.n_features
            )));
        }
        let mut fit_rows = Vec::new();
        for trace in &raw.sessions {
            let windows = make_windows(trace, options.window, options.stride);
            let (train, _) = split_session(&windows, options.train_fraction, options.split);
            let mut covered = vec![false; trace.len()];
            for w in &train {
                covered[w.index..w.index + options.window].iter_mut().for_each(|c| *c = true);
            }
            for (i, _) in covered.iter().enumerate().filter(|(_, c)| **c) {
                fit_rows.extend_from_slice(trace.row(i));
            }
        }
        let mask = fit_feature_mask(&fit_rows, f_raw)?;
        let feature_names = raw
            .feature_names
            .iter()
            .zip(&mask.retained)
            .filter(|(_, r)| **r)
            .map(|(n, _)| n.clone())
            .collect();
        let mut parts = Vec::with_capacity(raw.sessions.len());
        for trace in &raw.sessions {
            let z = standardize(trace, &mask)?;
            let data: Arc<[f32]> = z.records.iter().map(|&v| v as f32).collect();
            parts.push((z.driver_id, z.session_id, trace.len(), data));
        }
        Self::assemble(options, mask, feature_names, parts)
    }

    fn assemble(
        options: PrepareOptions,
        mask: FeatureMask,
        feature_names: Vec<String>,
        parts: Vec<(DriverId, u32, usize, Arc<[f32]>)>,
    ) -> Result<Self> {
        let n_features = mask.n_retained();
        let mut sessions = Vec::with_capacity(parts.len());
        let mut lookup = HashMap::new();
        for (driver_id, session_id, n_records, data) in parts {
            if data.len() != n_records * n_features {
                return Err(Error::Corrupt(format!(
                    "session ({driver_id}, {session_id}) holds {} values, expected {}",
                    data.len(),
                    n_records * n_features
                )));
            }
            if lookup.insert((driver_id, session_id), sessions.len()).is_some() {
                return Err(Error::Corrupt(format!("duplicate session ({driver_id}, {session_id})")));
            }
            let windows = cut_windows(Arc::clone(&data), n_features, driver_id, session_id, options.window, options.stride);
            let (train, test) = split_session(&windows, options.train_fraction, options.split);
            sessions.push(PreparedSession {
                driver_id,
                session_id,
                n_records,
                data,
                train,
                test,
            });
        }
        let mut ds = Self {
            options,
            mask,
            feature_names,
            sessions,
            hash: String::new(),
            lookup,
        };
        ds.hash = codec::sha256_hex(&ds.encode());
        Ok(ds)
    }

    pub fn n_features(&self) -> usize {
        self.mask.n_retained()
    }

    pub fn window(&self) -> usize {
        self.options.window
    }

    /// SHA-256 of the encoded artifact.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn drivers(&self) -> Vec<DriverId> {
        let mut ids: Vec<_> = self.sessions.iter().map(|s| s.driver_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn session(&self, driver: DriverId, session: u32) -> Option<&PreparedSession> {
        self.lookup.get(&(driver, session)).map(|&i| &self.sessions[i])
    }

    /// Sessions of `driver`, ascending by session id.
    pub fn sessions_of(&self, driver: DriverId) -> Vec<&PreparedSession> {
        let mut out: Vec<_> = self.sessions.iter().filter(|s| s.driver_id == driver).collect();
        out.sort_by_key(|s| s.session_id);
        out
    }

    pub fn train_pool(&self) -> Vec<WindowSample> {
        self.sessions.iter().flat_map(|s| s.train.iter().cloned()).collect()
    }

    pub fn test_pool(&self) -> Vec<WindowSample> {
        self.sessions.iter().flat_map(|s| s.test.iter().cloned()).collect()
    }

    pub fn window_by_key(&self, key: WindowKey) -> Option<WindowSample> {
        let s = self.session(key.driver, key.session)?;
        if !key.index.is_multiple_of(self.options.stride) || key.index + self.options.window > s.n_records {
            return None;
        }
        Some(WindowSample::new(
            Arc::clone(&s.data),
            self.options.window,
            self.n_features(),
            s.driver_id,
            s.session_id,
            key.index,
        ))
    }

    pub fn counts(&self) -> Vec<SessionCounts> {
        self.sessions
            .iter()
            .map(|s| SessionCounts {
                driver: s.driver_id,
                session: s.session_id,
                records: s.n_records,
                train_windows: s.train.len(),
                test_windows: s.test.len(),
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            dataset_hash: self.hash.clone(),
            options: self.options,
            raw_features: self.mask.n_raw(),
            feature_names: self.feature_names.clone(),
            sessions: self.counts(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.options.window as u64);
        w.u64(self.options.stride as u64);
        w.f64(self.options.train_fraction);
        match self.options.split {
            SplitMode::Chronological => w.u8(0),
            SplitMode::Random { seed } => {
                w.u8(1);
                w.u64(seed);
            }
        }
        w.u64(self.mask.retained.len() as u64);
        for r in &self.mask.retained {
            w.u8(u8::from(*r));
        }
        w.u64(self.mask.means.len() as u64);
        self.mask.means.iter().for_each(|&v| w.f64(v));
        self.mask.stds.iter().for_each(|&v| w.f64(v));
        w.u64(self.feature_names.len() as u64);
        self.feature_names.iter().for_each(|n| w.str(n));
        w.u64(self.sessions.len() as u64);
        for s in &self.sessions {
            w.u32(s.driver_id);
            w.u32(s.session_id);
            w.u64(s.n_records as u64);
            w.f32s(&s.data);
        }
        codec::seal(MAGIC, VERSION, &w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let payload = codec::open(MAGIC, VERSION, bytes)?;
        let mut r = Reader::new(payload);
        let window = r.u64()? as usize;
        let stride = r.u64()? as usize;
        let train_fraction = r.f64()?;
        let split = match r.u8()? {
            0 => SplitMode::Chronological,
            1 => SplitMode::Random { seed: r.u64()? },
            t => return Err(Error::Corrupt(format!("unknown split mode tag {t}"))),
        };
        let options = PrepareOptions {
            window,
            stride,
            train_fraction,
            split,
        };
        options.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let n_raw = r.count(1)?;
        let retained = (0..n_raw)
            .map(|_| match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                b => Err(Error::Corrupt(format!("bad retained flag {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let k = r.count(16)?;
        let means = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let stds = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mask = FeatureMask { retained, means, stds };
        mask.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let n_names = r.count(8)?;
        let feature_names = (0..n_names).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        if feature_names.len() != mask.n_retained() {
            return Err(Error::Corrupt("feature names do not match mask".into()));
        }
        let n_sessions = r.count(24)?;
        let mut parts = Vec::with_capacity(n_sessions);
        for _ in 0..n_sessions {
            let driver = r.u32()?;
            let session = r.u32()?;
            let n_records = r.u64()? as usize;
            let data: Arc<[f32]> = r.f32s()?.into();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corrupt("non-finite value in prepared trace".into()));
            }
            parts.push((driver, session, n_records, data));
        }
        r.finish()?;
        if mask.n_retained() == 0 && parts.iter().any(|p| p.2 > 0) {
            return Err(Error::Corrupt("records present but no features retained".into()));
        }
        Self::assemble(options, mask, feature_names, parts)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write(PREPARED_FILE, &self.encode())?;
        write(MASK_FILE, self.mask.to_json().as_bytes())?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write(MANIFEST_FILE, manifest.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(PREPARED_FILE);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Self::decode(&bytes)
    }
}
