#![no_main]

use libfuzzer_sys::fuzz_target;
use rhostab::StateSpaceSystem;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sys) = StateSpaceSystem::from_json(text) {
        let again = StateSpaceSystem::from_json(&sys.to_json()).expect("re-encoded system decodes");
        assert_eq!(again.n_states(), sys.n_states());
        assert_eq!(again.n_inputs(), sys.n_inputs());
        assert_eq!(again.n_outputs(), sys.n_outputs());
        let _ = sys.poles();
    }
});
