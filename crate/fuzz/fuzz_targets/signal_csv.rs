#![no_main]

use libfuzzer_sys::fuzz_target;
use rhostab::Signal;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for strict in [false, true] {
        if let Ok(sig) = Signal::from_csv(text, strict) {
            // whatever decodes must survive a round trip
            let again = Signal::from_csv(&sig.to_csv(), strict).expect("re-encoded signal decodes");
            assert_eq!(again.dim(), sig.dim());
            assert_eq!(again.start(), sig.start());
            assert_eq!(again.len(), sig.len());
        }
    }
});
