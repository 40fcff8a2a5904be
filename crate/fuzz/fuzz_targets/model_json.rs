#![no_main]

use fqh_core::io::{model_to_json, parse_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse_model(text) {
        let again = parse_model(&model_to_json(&model)).expect("written model parses");
        assert_eq!(again, model);
    }
});
