#![no_main]

use libfuzzer_sys::fuzz_target;
use parfed::harness::parse_histogram_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_histogram_config(text);
    }
});
