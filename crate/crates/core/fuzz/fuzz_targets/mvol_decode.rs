#![no_main]

use ifss_core::volume::{decode_mvol, encode_mvol};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(obj) = decode_mvol(data) {
        // Anything accepted must survive a round trip.
        assert_eq!(decode_mvol(&encode_mvol(&obj)).unwrap(), obj);
    }
});
