#![no_main]

use std::sync::OnceLock;

use yamabe_core::geometry::io::{parse_field_csv, FieldHeader};

const HEADER: &str = r#"{"n": 3, "shape": [8, 8, 9], "spacing": [0.125, 0.125, 0.125], "kind": "scalar"}"#;

fn header() -> &'static FieldHeader {
    static H: OnceLock<FieldHeader> = OnceLock::new();
    H.get_or_init(|| FieldHeader::from_json(HEADER).expect("fixed header parses"))
}

libfuzzer_sys::fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_field_csv(s, header());
    }
});
