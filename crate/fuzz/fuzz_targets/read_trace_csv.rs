#![no_main]

use libfuzzer_sys::fuzz_target;
use parfed::trace::{read_trace_csv, write_trace_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_trace_csv(data) {
        let mut out = Vec::new();
        write_trace_csv(&records, &mut out).unwrap();
        assert_eq!(read_trace_csv(out.as_slice()).unwrap().len(), records.len());
    }
});
