#![no_main]

use drivercl::data::PreparedDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = PreparedDataset::decode(data) {
        let again = PreparedDataset::decode(&ds.encode()).unwrap();
        assert_eq!(again.hash(), ds.hash());
        assert_eq!(again.counts(), ds.counts());
    }
});
