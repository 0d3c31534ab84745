#![no_main]

use aadmm::io::{instance_to_string, parse_instance, InstanceFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(inst) = parse_instance(text) else { return };
    // accepted documents round-trip and evaluate without panicking
    let file = InstanceFile::from_loaded(&inst);
    let again = parse_instance(&instance_to_string(&file).unwrap()).unwrap();
    assert_eq!(again, inst);
    let x = inst.start();
    let _ = inst.problem.objective(&x);
    let _ = inst.problem.smooth().gradient(&x);
});
