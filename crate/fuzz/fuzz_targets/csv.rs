//! Arbitrary bytes as a sensor log. Parse errors are fine; panics are not.

#![no_main]

use drivercl::data::{load_csv_reader, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut schema = CsvSchema::new("Class", "Session");
    schema.driver_labels = Some(vec!["A".into(), "B".into(), "C".into()]);
    if let Ok(raw) = load_csv_reader(data, &schema) {
        for s in &raw.sessions {
            assert_eq!(s.records.len(), s.len() * raw.n_features());
        }
    }
});
