#![no_main]

use aadmm::bench::{csv_string, read_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_csv(data) {
        if !rows.is_empty() {
            let text = csv_string(&rows).unwrap();
            let again = read_csv(text.as_bytes()).unwrap();
            assert_eq!(again.len(), rows.len());
        }
    }
});
