//! Sample-CSV ingestion must either reject the input with an error or
//! produce a sample whose every point satisfies the documented invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sample) = cps_core::io::parse_sample_csv(data) {
        assert!(sample.len() > 0);
        for p in sample.points() {
            assert!(p.x.is_finite());
            assert!(p.y.is_finite());
            assert!(p.weight.is_finite() && p.weight > 0.0);
        }
    }
});
