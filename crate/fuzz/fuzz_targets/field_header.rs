#![no_main]

use yamabe_core::geometry::io::FieldHeader;

libfuzzer_sys::fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = FieldHeader::from_json(s);
    }
});
