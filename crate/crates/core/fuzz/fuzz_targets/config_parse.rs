#![no_main]

use ifss_core::config::{dataset_spec, train_setup};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = train_setup(text);
        let _ = dataset_spec(text);
    }
});
