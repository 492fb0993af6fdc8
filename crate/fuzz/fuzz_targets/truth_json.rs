#![no_main]

use duti::io::TruthDocument;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = TruthDocument::parse(text) {
        let again = doc.to_json().expect("a parsed truth file serializes");
        assert_eq!(TruthDocument::parse(&again).expect("round trip"), doc);
    }
});
