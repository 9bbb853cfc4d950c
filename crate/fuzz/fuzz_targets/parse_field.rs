#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(u) = kbstrip::field_file::parse_field(text) {
            let text = kbstrip::field_file::write_field_string(&u);
            assert_eq!(kbstrip::field_file::parse_field(&text).expect("round trip"), u);
        }
    }
});
