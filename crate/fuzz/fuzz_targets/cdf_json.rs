//! Step-CDF documents: deserialization validates, so every accepted CDF
//! must evaluate, invert, and score without panicking.

#![no_main]

use cps_core::eval::crps;
use cps_core::step_cdf::Side;
use cps_core::StepCdf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cdf) = serde_json::from_slice::<StepCdf>(data) else {
        return;
    };
    assert_eq!(*cdf.cum().last().unwrap(), 1.0);
    let jumps = cdf.jumps().to_vec();
    let mut prev = 0.0;
    for (i, &j) in jumps.iter().enumerate() {
        let right = cdf.eval(j, Side::Right);
        assert_eq!(right, cdf.cum()[i]);
        assert!(cdf.eval(j, Side::Left) <= right);
        assert!(right >= prev);
        prev = right;
        let _ = crps(&cdf, j);
    }
    for q in [1e-9, 0.5, 1.0] {
        let y = cdf.quantile(q).expect("quantile in (0, 1] succeeds");
        assert!(y.is_finite());
    }
});
