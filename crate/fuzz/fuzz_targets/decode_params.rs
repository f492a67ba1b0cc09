#![no_main]

use libfuzzer_sys::fuzz_target;
use parfed::trace::{decode_params, encode_params};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(v) = decode_params(text) {
        let blob = encode_params(&v);
        assert_eq!(encode_params(&decode_params(&blob).unwrap()), blob);
    }
});
