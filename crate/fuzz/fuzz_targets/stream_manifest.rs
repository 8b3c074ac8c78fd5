//! Stream manifests are rebuilt against a small fixed dataset, so both the
//! JSON layer and the key lookup get exercised.

#![no_main]

use std::sync::OnceLock;

use drivercl::data::{PrepareOptions, PreparedDataset, SyntheticSpec};
use drivercl::scenarios::{StreamManifest, TaskStream};
use libfuzzer_sys::fuzz_target;

fn dataset() -> &'static PreparedDataset {
    static DS: OnceLock<PreparedDataset> = OnceLock::new();
    DS.get_or_init(|| {
        let raw = SyntheticSpec { drivers: 4, sessions: 2, records: 200, features: 4, seed: 3 }.generate();
        PreparedDataset::prepare(&raw, PrepareOptions::default()).unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(manifest) = StreamManifest::from_json(text) else { return };
    if let Ok(stream) = TaskStream::from_manifest(&manifest, dataset()) {
        assert_eq!(stream.len(), manifest.tasks.len());
    }
});
