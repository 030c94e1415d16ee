#![no_main]

use dbgen::model::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::from_bytes(data) {
        // Manifest JSON may be re-spelled, so compare canonical encodings.
        let bytes = c.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("canonical encoding decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
