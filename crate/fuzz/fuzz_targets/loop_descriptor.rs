#![no_main]

use libfuzzer_sys::fuzz_target;
use rhostab::feedback::LoopDescriptor;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(desc) = LoopDescriptor::from_json(text) {
        // construction decides well-posedness; it may refuse but not panic
        let _ = desc.build_loop();
    }
});
