#![no_main]

use yamabe_core::pde::parse_trace_jsonl;

libfuzzer_sys::fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_trace_jsonl(s);
    }
});
