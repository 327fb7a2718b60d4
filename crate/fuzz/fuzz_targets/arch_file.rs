#![no_main]

use gncount::inputs::{format_architecture, parse_architecture};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(layers) = parse_architecture(text) {
        let again = parse_architecture(&format_architecture(&layers)).expect("formatted architecture parses");
        assert_eq!(again, layers);
    }
});
