#![no_main]

use libfuzzer_sys::fuzz_target;
use parfed::{decode_bits, encode_bits};

fuzz_target!(|data: &[u8]| {
    let Some((&len, bytes)) = data.split_first() else {
        return;
    };
    let d = len as usize;
    if let Ok(v) = decode_bits(bytes, d) {
        assert_eq!(v.len(), d);
        assert_eq!(encode_bits(&v).unwrap(), bytes);
    }
});
