//! Configuration parsing: any JSON that deserializes must survive
//! validation without panicking and round-trip exactly.

#![no_main]

use cps_core::pipeline::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = serde_json::from_slice::<ExperimentConfig>(data) {
        let _ = config.validate();
        let text = serde_json::to_string(&config).expect("config serializes");
        let back: ExperimentConfig = serde_json::from_str(&text).expect("round trip parses");
        assert_eq!(config, back);
    }
});
