//! The checked-in fuzz seeds must stay decodable as the formats evolve,
//! otherwise fuzzing starts from nothing but rejects.

use std::path::PathBuf;

use drivercl::data::{load_csv_reader, CsvSchema, FeatureMask, PrepareOptions, PreparedDataset, SyntheticSpec};
use drivercl::eval::ExperimentConfig;
use drivercl::model::{init_model, ClassifierConfig, ModelSnapshot};
use drivercl::scenarios::{StreamManifest, TaskStream};
use drivercl::strategies::Strategy;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn fixture() -> (PreparedDataset, ModelSnapshot) {
    let raw = SyntheticSpec { drivers: 4, sessions: 2, records: 200, features: 4, seed: 3 }.generate();
    let ds = PreparedDataset::prepare(&raw, PrepareOptions::default()).unwrap();
    let cfg = ClassifierConfig { hidden_size: 8, epochs_per_task: 2, ..ClassifierConfig::reference(4, 4) };
    let mut model = init_model(cfg, 1).unwrap();
    model.register_classes(&[0, 1, 2, 3]).unwrap();
    (ds, model)
}

#[test]
fn binary_seeds_decode() {
    let (ds, model) = fixture();
    for (name, bytes) in seeds("prepared_dataset") {
        let decoded = PreparedDataset::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(decoded.hash(), ds.hash(), "{name} no longer matches the fixture");
    }
    for (name, bytes) in seeds("checkpoint") {
        let m = ModelSnapshot::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(m.config, model.config, "{name}");
    }
    for (name, bytes) in seeds("strategy_state") {
        let s = Strategy::decode(&bytes, &ds, &model).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(Strategy::decode(&s.encode(), &ds, &model).unwrap(), s);
    }
}

#[test]
fn text_seeds_decode() {
    let (ds, _) = fixture();
    for (name, bytes) in seeds("stream_manifest") {
        let m = StreamManifest::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        TaskStream::from_manifest(&m, &ds).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("feature_mask") {
        FeatureMask::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("experiment_config") {
        let text = std::str::from_utf8(&bytes).unwrap();
        let cfg = if name.ends_with(".toml") { ExperimentConfig::from_toml(text) } else { ExperimentConfig::from_json(text) };
        cfg.unwrap_or_else(|e| panic!("{name}: {e}")).validate().unwrap();
    }
    let mut schema = CsvSchema::new("Class", "Session");
    schema.driver_labels = Some(vec!["A".into(), "B".into(), "C".into()]);
    let parsed = seeds("csv").into_iter().filter(|(_, b)| load_csv_reader(b.as_slice(), &schema).is_ok()).count();
    assert!(parsed >= 1, "no CSV seed parses");
}
