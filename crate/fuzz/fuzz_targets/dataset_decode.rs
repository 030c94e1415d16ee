#![no_main]

use dbgen::dataset::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, records)) = Dataset::records_from_bytes(data) {
        for r in &records {
            let _ = r.window(header.num_objectives);
        }
    }
});
