#![no_main]

use aadmm::io::parse_certificate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = parse_certificate(text) {
        let back = serde_json::to_string(&file).unwrap();
        let _ = parse_certificate(&back);
    }
});
