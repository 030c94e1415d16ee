#![no_main]

use dbgen::harness::Archive;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = Archive::from_bytes(data) {
        let bytes = a.to_bytes();
        let again = Archive::from_bytes(&bytes).expect("canonical encoding decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
