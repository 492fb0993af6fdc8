#![no_main]

use duti::io::{document_kind, ReportDocument};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = document_kind(text);
    if let Ok(doc) = ReportDocument::parse(text) {
        let again = doc.to_json().expect("a parsed report serializes");
        assert_eq!(ReportDocument::parse(&again).expect("round trip"), doc);
    }
});
