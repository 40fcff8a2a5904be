#![no_main]

use fqh_core::io::{parse_result, result_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(result) = parse_result(text) {
        let written = result_to_json(&result);
        let again = parse_result(&written).expect("written result parses");
        assert_eq!(result_to_json(&again), written);
    }
});
