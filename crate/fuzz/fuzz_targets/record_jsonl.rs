//! Prediction-record lines: anything that deserializes carries a validated
//! band and crisp CDF, so the downstream scoring functions must not panic
//! on it.

#![no_main]

use cps_core::eval::{crps, pit};
use cps_core::pipeline::PredictionRecord;
use cps_core::step_cdf::Side;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(record) = serde_json::from_slice::<PredictionRecord>(data) else {
        return;
    };
    let Some(p) = &record.prediction else { return };

    let _ = p.band.thickness();
    let jumps = p.crisp.jumps().to_vec();
    for y in jumps {
        let _ = p.crisp.eval(y, Side::Left);
        let _ = p.crisp.eval(y, Side::Right);
        let _ = crps(&p.crisp, y);
        let _ = pit(&p.crisp, y, 0.5);
        let _ = p.band.lower().eval(y, Side::Right);
        let _ = p.band.upper().eval(y, Side::Right);
    }
    for q in [1e-9, 0.25, 0.5, 0.75, 1.0] {
        let _ = p.crisp.quantile(q);
    }
});
