#![no_main]

use fqh_core::io::parse_complex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(z) = parse_complex(text) {
        assert!(z.re.is_finite() && z.im.is_finite());
        assert_eq!(parse_complex(&format!("{:?},{:?}", z.re, z.im)).unwrap(), z);
    }
});
