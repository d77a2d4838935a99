#![no_main]

use libfuzzer_sys::fuzz_target;
use rhostab::certify::PassivityCertificate;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cert) = PassivityCertificate::from_json(text) {
        let again = PassivityCertificate::from_json(&cert.to_json()).expect("re-encoded certificate decodes");
        assert_eq!(again.kind, cert.kind);
        assert_eq!(again.analytic, cert.analytic);
        assert!(again.delta == cert.delta || (again.delta.is_nan() && cert.delta.is_nan()));
    }
});
