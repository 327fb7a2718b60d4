#![no_main]

use gncount::inputs::parse_layer_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(layer) = parse_layer_spec(s) {
            assert!(layer.n_in > 0 && layer.n_out > 0);
        }
    }
});
