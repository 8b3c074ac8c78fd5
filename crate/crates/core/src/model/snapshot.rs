use std::path::Path;

use rand::Rng as _;

use super::network::{param_index, time_major, Network};
use super::ClassifierConfig;
use crate::codec::{self, Reader, Writer};
use crate::data::{DriverId, WindowSample};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const MAGIC: &[u8; 8] = b"DCLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows per forward pass when scoring large window sets.
const EVAL_CHUNK: usize = 256;

/// Model parameters plus the class-to-output-unit assignment. Output unit
/// `u` belongs to `active_classes[u]`; units are assigned append-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub config: ClassifierConfig,
    pub init_seed: u64,
    pub net: Network<f32>,
    pub active_classes: Vec<DriverId>,
}

pub fn init_model(config: ClassifierConfig, init_seed: u64) -> Result<ModelSnapshot> {
    config.validate()?;
    let mut net = Network::zeros(config.dims());
    let bound = 1.0 / (config.hidden_size as f32).sqrt();
    let head_start = net.head_unit_ranges(0).0.start;
    let mut lstm_rng = rng::rng_for(init_seed, "lstm-init", 0);
    for p in &mut net.params[..head_start] {
        *p = lstm_rng.random_range(-bound..bound);
    }
    let mut model = ModelSnapshot {
        config,
        init_seed,
        net,
        active_classes: Vec::new(),
    };
    for u in 0..model.config.max_classes {
        model.init_head_unit(u);
    }
    Ok(model)
}

impl ModelSnapshot {
    fn init_head_unit(&mut self, u: usize) {
        let bound = 1.0 / (self.config.hidden_size as f32).sqrt();
        let mut r = rng::rng_for(self.init_seed, "head-unit", u as u64);
        let (w, b) = self.net.head_unit_ranges(u);
        for p in &mut self.net.params[w] {
            *p = r.random_range(-bound..bound);
        }
        self.net.params[b] = r.random_range(-bound..bound);
    }

    /// Number of active output units.
    pub fn k(&self) -> usize {
        self.active_classes.len()
    }

    pub fn unit_of(&self, label: DriverId) -> Option<usize> {
        self.active_classes.iter().position(|&c| c == label)
    }

    pub fn n_params(&self) -> usize {
        self.net.params.len()
    }

    /// Returns to the state `init_model` produced for this config and seed.
    pub fn reset(&mut self) {
        *self = init_model(self.config.clone(), self.init_seed).expect("config was validated at init");
    }

    /// Appends `new_classes` to the active set and re-draws their output
    /// units from the seeded initializer.
    pub fn register_classes(&mut self, new_classes: &[DriverId]) -> Result<()> {
        for (i, c) in new_classes.iter().enumerate() {
            if self.active_classes.contains(c) || new_classes[..i].contains(c) {
                return Err(Error::State(format!("class {c} is already registered")));
            }
        }
        if self.k() + new_classes.len() > self.config.max_classes {
            return Err(Error::Capacity(format!(
                "{} active + {} new classes exceed the {}-unit head",
                self.k(),
                new_classes.len(),
                self.config.max_classes
            )));
        }
        for &c in new_classes {
            self.init_head_unit(self.k());
            self.active_classes.push(c);
        }
        Ok(())
    }

    pub(crate) fn check_windows(&self, windows: &[WindowSample]) -> Result<usize> {
        let steps = windows.first().map_or(0, |w| w.length);
        for w in windows {
            if w.features != self.config.input_features || w.length != steps {
                return Err(Error::Shape(format!(
                    "window {}x{} does not match batch steps {steps} and model features {}",
                    w.length, w.features, self.config.input_features
                )));
            }
        }
        Ok(steps)
    }

    /// Raw logits (`windows.len() x k`, active-class order). Dropout is
    /// applied only when `dropout_rng` is given.
    pub fn forward(&self, windows: &[WindowSample], dropout_rng: Option<&mut Rng>) -> Result<Vec<f32>> {
        if self.k() == 0 {
            return Err(Error::State("model has no active classes".into()));
        }
        let steps = self.check_windows(windows)?;
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let views: Vec<&[f32]> = windows.iter().map(WindowSample::values).collect();
        let x = time_major::<f32>(&views, steps, self.config.input_features);
        let dropout = dropout_rng.map(|r| (self.config.dropout, r));
        Ok(self.net.forward(&x, windows.len(), steps, self.k(), dropout).0)
    }

    /// Eval-mode logits for an arbitrarily large window set.
    pub fn predict_logits(&self, windows: &[WindowSample]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(windows.len() * self.k());
        for chunk in windows.chunks(EVAL_CHUNK) {
            out.extend(self.forward(chunk, None)?);
        }
        if windows.is_empty() && self.k() == 0 {
            return Err(Error::State("model has no active classes".into()));
        }
        Ok(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new();
        w.u64(c.input_features as u64);
        w.u64(c.hidden_size as u64);
        w.u64(c.num_layers as u64);
        w.f64(c.dropout);
        w.u64(c.max_classes as u64);
        w.f64(c.learning_rate);
        w.u64(c.batch_size as u64);
        w.u64(c.epochs_per_task as u64);
        match c.early_stopping_patience {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.u64(p as u64);
            }
        }
        w.u64(self.init_seed);
        w.u32s(&self.active_classes);
        let index = param_index(c.dims());
        w.u64(index.len() as u64);
        for spec in &index {
            w.str(&spec.name);
            w.u64(spec.shape.len() as u64);
            spec.shape.iter().for_each(|&d| w.u64(d as u64));
            w.u64(spec.offset as u64);
        }
        w.f32s(&self.net.params);
        codec::seal(MAGIC, CHECKPOINT_VERSION, &w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let payload = codec::open(MAGIC, CHECKPOINT_VERSION, bytes)?;
        let mut r = Reader::new(payload);
        let mut count = || -> Result<usize> {
            let v = r.u64()?;
            usize::try_from(v).ok().filter(|&v| v <= 1 << 32).ok_or_else(|| Error::Corrupt(format!("implausible size {v}")))
        };
        let input_features = count()?;
        let hidden_size = count()?;
        let num_layers = count()?;
        let dropout = r.f64()?;
        let max_classes = {
            let v = r.u64()?;
            usize::try_from(v).ok().filter(|&v| v <= 1 << 32).ok_or_else(|| Error::Corrupt(format!("implausible size {v}")))?
        };
        let learning_rate = r.f64()?;
        let batch_size = r.u64()? as usize;
        let epochs_per_task = r.u64()? as usize;
        let early_stopping_patience = match r.u8()? {
            0 => None,
            1 => Some(r.u64()? as usize),
            t => return Err(Error::Corrupt(format!("bad patience tag {t}"))),
        };
        let config = ClassifierConfig {
            input_features,
            hidden_size,
            num_layers,
            dropout,
            max_classes,
            learning_rate,
            batch_size,
            epochs_per_task,
            early_stopping_patience,
        };
        config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let init_seed = r.u64()?;
        let active_classes = r.u32s()?;
        let n_specs = r.count(8)?;
        let mut specs = Vec::with_capacity(n_specs);
        for _ in 0..n_specs {
            let name = r.str()?;
            let ndim = r.count(8)?;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            specs.push((name, shape, offset));
        }
        let params = r.f32s()?;
        r.finish()?;
        let expected = param_index(config.dims());
        let matches = specs.len() == expected.len()
            && specs
                .iter()
                .zip(&expected)
                .all(|((n, s, o), e)| *n == e.name && *s == e.shape && *o == e.offset);
        if !matches {
            return Err(Error::Corrupt("parameter index does not match the model configuration".into()));
        }
        let total: usize = expected.iter().map(|s| s.len()).sum();
        if params.len() != total {
            return Err(Error::Corrupt(format!("{} parameters, expected {total}", params.len())));
        }
        if active_classes.len() > config.max_classes {
            return Err(Error::Corrupt("more active classes than output units".into()));
        }
        let mut uniq = active_classes.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != active_classes.len() {
            return Err(Error::Corrupt("duplicate active class".into()));
        }
        let mut net = Network::zeros(config.dims());
        net.params = params;
        Ok(ModelSnapshot {
            config,
            init_seed,
            net,
            active_classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::param_count;

    fn small() -> ClassifierConfig {
        ClassifierConfig {
            hidden_size: 8,
            ..ClassifierConfig::reference(3, 4)
        }
    }

    fn windows(n: usize) -> Vec<WindowSample> {
        (0..n)
            .map(|i| WindowSample::from_values((0..15).map(|v| ((v * (i + 1)) as f32).sin()).collect(), 5, 3, 0, 1, i))
            .collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(small(), 4).unwrap();
        let b = init_model(small(), 4).unwrap();
        assert_eq!(a.net.params, b.net.params);
        assert!(a.active_classes.is_empty());
        assert_ne!(a.net.params, init_model(small(), 5).unwrap().net.params);
    }

    #[test]
    fn reference_recipe_size() {
        let cfg = ClassifierConfig::reference(46, 10);
        assert_eq!(cfg.dims().input, 46);
        let n = param_count(cfg.dims());
        // Four bytes per parameter: the 0.89 MB network of the reference setup.
        assert_eq!(format!("{:.2}", (n * 4) as f64 / 1e6), "0.89");
    }

    #[test]
    fn registration_rules() {
        let mut m = init_model(small(), 1).unwrap();
        assert!(matches!(m.forward(&windows(1), None), Err(Error::State(_))));
        m.register_classes(&[0, 1]).unwrap();
        assert_eq!(m.k(), 2);
        assert!(matches!(m.register_classes(&[1]), Err(Error::State(_))));
        assert!(matches!(m.register_classes(&[5, 6, 7]), Err(Error::Capacity(_))));
        let before = m.net.params.clone();
        m.register_classes(&[3]).unwrap();
        let (w, b) = m.net.head_unit_ranges(2);
        for (i, (x, y)) in before.iter().zip(&m.net.params).enumerate() {
            if !w.contains(&i) && i != b {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(m.unit_of(3), Some(2));
    }

    #[test]
    fn forward_shapes_and_purity() {
        let mut m = init_model(small(), 2).unwrap();
        m.register_classes(&[2, 0]).unwrap();
        assert!(m.forward(&[], None).unwrap().is_empty());
        let w = windows(3);
        let before = m.clone();
        let a = m.forward(&w, None).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, m.forward(&w, None).unwrap());
        assert_eq!(m, before);
        let dup = vec![w[1].clone(), w[1].clone()];
        let d = m.forward(&dup, None).unwrap();
        assert_eq!(d[..2], d[2..]);
        let bad = WindowSample::from_values(vec![0.0; 10], 5, 2, 0, 1, 0);
        assert!(matches!(m.forward(&[bad], None), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = init_model(small(), 3).unwrap();
        m.register_classes(&[1, 3]).unwrap();
        let back = ModelSnapshot::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        let w = windows(4);
        let a: Vec<u32> = m.forward(&w, None).unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.forward(&w, None).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        let mut bytes = m.encode();
        let n = bytes.len();
        bytes[n / 2] ^= 0x40;
        assert!(ModelSnapshot::decode(&bytes).is_err());
    }
}
