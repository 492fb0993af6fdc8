#![no_main]

use duti::io::BaselineDocument;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = BaselineDocument::parse(text) {
        let again = doc.to_json().expect("a parsed ranking serializes");
        assert_eq!(BaselineDocument::parse(&again).expect("round trip"), doc);
    }
});
