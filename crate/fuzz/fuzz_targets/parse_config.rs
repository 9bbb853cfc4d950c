#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = kbstrip::config::parse_config(text) {
            // whatever parses must survive its own serialization
            let again = kbstrip::config::parse_config(&spec.to_config_string()).expect("round trip");
            assert_eq!(again, spec);
        }
    }
});
