#![no_main]

use libfuzzer_sys::fuzz_target;
use segcrowd::data::parse_manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_manifest(text) {
        let json = m.to_json();
        let again = parse_manifest(&json).unwrap();
        assert_eq!(again.entries, m.entries);
        assert_eq!(again.to_json(), json);
    }
});
