#![no_main]

use libfuzzer_sys::fuzz_target;
use rhostab::paa::IdentExperiment;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(exp) = IdentExperiment::from_json(text) {
        assert!(exp.steps >= 1);
        assert!(exp.plant.n_params() >= 1);
        let _ = exp.plant.inverse_denominator();
    }
});
