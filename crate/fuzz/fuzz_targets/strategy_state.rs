//! Strategy state decoded against the dataset and model the seed corpus
//! was produced with (4 drivers, hidden 8, two layers).

#![no_main]

use std::sync::OnceLock;

use drivercl::data::{PrepareOptions, PreparedDataset, SyntheticSpec};
use drivercl::model::{init_model, ClassifierConfig, ModelSnapshot};
use drivercl::strategies::Strategy;
use libfuzzer_sys::fuzz_target;

fn fixture() -> &'static (PreparedDataset, ModelSnapshot) {
    static FIXTURE: OnceLock<(PreparedDataset, ModelSnapshot)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let raw = SyntheticSpec { drivers: 4, sessions: 2, records: 200, features: 4, seed: 3 }.generate();
        let ds = PreparedDataset::prepare(&raw, PrepareOptions::default()).unwrap();
        let cfg = ClassifierConfig { hidden_size: 8, epochs_per_task: 2, ..ClassifierConfig::reference(4, 4) };
        let mut model = init_model(cfg, 1).unwrap();
        model.register_classes(&[0, 1, 2, 3]).unwrap();
        (ds, model)
    })
}

fuzz_target!(|data: &[u8]| {
    let (ds, model) = fixture();
    if let Ok(state) = Strategy::decode(data, ds, model) {
        assert_eq!(Strategy::decode(&state.encode(), ds, model).unwrap(), state);
    }
});
