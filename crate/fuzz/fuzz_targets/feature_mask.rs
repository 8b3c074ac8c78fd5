#![no_main]

use drivercl::data::FeatureMask;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mask) = FeatureMask::from_json(text) {
        mask.validate().expect("decoded masks are valid");
        assert_eq!(FeatureMask::from_json(&mask.to_json()).unwrap(), mask);
    }
});
