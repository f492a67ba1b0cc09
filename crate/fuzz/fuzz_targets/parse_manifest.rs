#![no_main]

use libfuzzer_sys::fuzz_target;
use parfed::harness::parse_manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_manifest(text) {
        let echo = m.resolved_json().unwrap();
        let again = parse_manifest(&echo).unwrap();
        assert_eq!(again.resolved_json().unwrap(), echo);
    }
});
