//! Binary strategy state. Windows are stored as keys into the prepared
//! dataset; a distillation teacher is stored as a flag and restored from
//! the checkpoint written at the same task boundary.

use std::path::Path;

use super::{FisherBundle, ReplayEntry, Strategy, StrategyConfig};
use crate::codec::{self, Reader, Writer};
use crate::data::{PreparedDataset, WindowKey, WindowSample};
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;

const MAGIC: &[u8; 8] = b"DCLSTAT\0";
pub const STATE_VERSION: u32 = 1;

fn put_key(w: &mut Writer, key: WindowKey) {
    w.u32(key.driver);
    w.u32(key.session);
    w.u64(key.index as u64);
}

fn get_window(r: &mut Reader, dataset: &PreparedDataset) -> Result<WindowSample> {
    let key = WindowKey { driver: r.u32()?, session: r.u32()?, index: r.u64()? as usize };
    dataset
        .window_by_key(key)
        .ok_or_else(|| Error::Corrupt(format!("window {key:?} is not in the prepared dataset")))
}

impl Strategy {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        w.u64(self.stored.len() as u64);
        for s in &self.stored {
            put_key(&mut w, s.key());
        }
        match &self.memory {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                w.u64(m.capacity as u64);
                w.u64(m.tasks_seen as u64);
                w.u64(m.entries.len() as u64);
                for e in &m.entries {
                    put_key(&mut w, e.window.key());
                    w.u64(e.origin_task as u64);
                    match &e.logits {
                        None => w.u8(0),
                        Some(z) => {
                            w.u8(1);
                            w.f32s(z);
                        }
                    }
                }
            }
        }
        w.u64(self.bundles.len() as u64);
        for b in &self.bundles {
            w.u64(b.task_id as u64);
            w.f32s(&b.importance);
            w.f32s(&b.anchor);
        }
        w.u8(self.teacher.is_some() as u8);
        codec::seal(MAGIC, STATE_VERSION, &w.into_inner())
    }

    /// Restores state saved by `encode`, resolving windows against `dataset`
    /// and validating shapes against `model`.
    pub fn decode(bytes: &[u8], dataset: &PreparedDataset, model: &ModelSnapshot) -> Result<Self> {
        let mut r = Reader::new(codec::open(MAGIC, STATE_VERSION, bytes)?);
        let config: StrategyConfig =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Corrupt(format!("strategy config: {e}")))?;
        config.validate()?;
        let mut s = Strategy::new(config);

        let n = r.count(16)?;
        for _ in 0..n {
            s.stored.push(get_window(&mut r, dataset)?);
        }

        let has_memory = r.u8()?;
        if (has_memory == 1) != s.memory.is_some() || has_memory > 1 {
            return Err(Error::Corrupt("replay memory presence does not match the strategy".into()));
        }
        if let Some(memory) = s.memory.as_mut() {
            let capacity = r.u64()? as usize;
            if capacity != memory.capacity {
                return Err(Error::Corrupt(format!("memory capacity {capacity} != configured {}", memory.capacity)));
            }
            let tasks_seen = r.u64()? as usize;
            let n = r.count(25)?;
            if n > capacity {
                return Err(Error::Corrupt(format!("{n} entries exceed capacity {capacity}")));
            }
            let mut entries = Vec::with_capacity(n);
            let mut last_origin = 0;
            for _ in 0..n {
                let window = get_window(&mut r, dataset)?;
                let origin_task = r.u64()? as usize;
                if origin_task < last_origin || origin_task == 0 {
                    return Err(Error::Corrupt("replay entries out of task order".into()));
                }
                last_origin = origin_task;
                let logits = match r.u8()? {
                    0 => None,
                    1 => {
                        let z = r.f32s()?;
                        if z.len() > model.k() || z.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Corrupt("stored logits do not fit the model head".into()));
                        }
                        Some(z)
                    }
                    t => return Err(Error::Corrupt(format!("bad logit flag {t}"))),
                };
                entries.push(ReplayEntry { window, logits, origin_task });
            }
            let wants_logits = matches!(s.config, StrategyConfig::Derpp { .. });
            if entries.iter().any(|e| e.logits.is_some() != wants_logits) {
                return Err(Error::Corrupt("stored logits present for the wrong strategy".into()));
            }
            memory.tasks_seen = tasks_seen;
            memory.entries = entries;
        }

        let n = r.count(24)?;
        for _ in 0..n {
            s.bundles.push(FisherBundle { task_id: r.u64()? as usize, importance: r.f32s()?, anchor: r.f32s()? });
        }
        super::ewc::validate_bundles(model.n_params(), &s.bundles).map_err(|e| Error::Corrupt(e.to_string()))?;

        match r.u8()? {
            0 => {}
            1 if matches!(s.config, StrategyConfig::Lwf { .. }) => s.teacher = Some(model.clone()),
            t => return Err(Error::Corrupt(format!("bad teacher flag {t}"))),
        }
        r.finish()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, dataset: &PreparedDataset, model: &ModelSnapshot) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, dataset, model)
    }
}
