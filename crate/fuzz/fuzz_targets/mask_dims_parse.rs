#![no_main]

use dbgen::generate::parse_mask_dims;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dims) = parse_mask_dims(text) {
            let joined: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            assert_eq!(parse_mask_dims(&joined.join(",")).unwrap(), dims);
        }
    }
});
