#![no_main]

use aadmm::bench::BenchConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = BenchConfig::from_toml_str(text) {
        // validated grids expand without panicking; cap the work per input
        if cfg.grid.iter().map(|g| g.omega.len() * g.sizes.len()).sum::<usize>() * cfg.seeds.len() < 10_000 {
            let _ = cfg.instances();
        }
    }
});
