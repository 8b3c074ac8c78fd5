//! Configs arrive as TOML or JSON; both front ends must reject bad input
//! with an error, and anything accepted must survive a JSON round trip.

#![no_main]

use drivercl::eval::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for parsed in [ExperimentConfig::from_toml(text), ExperimentConfig::from_json(text)] {
        if let Ok(cfg) = parsed {
            let _ = cfg.validate();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }
});
