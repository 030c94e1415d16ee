#![no_main]

use dbgen::harness::AppConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = AppConfig::parse(text) {
            let _ = cfg.run.validate();
            let _ = cfg.train.validate();
            let _ = cfg.run.hash();
        }
    }
});
