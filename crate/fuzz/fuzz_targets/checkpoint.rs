#![no_main]

use drivercl::model::ModelSnapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ModelSnapshot::decode(data) {
        assert_eq!(ModelSnapshot::decode(&model.encode()).unwrap(), model);
    }
});
