#![no_main]

use gncount::idx::{encode_idx, parse_idx_images};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        assert_eq!(images.pixels.len(), images.count * images.rows * images.cols);
        let (bytes, _) = encode_idx(&images, &[]);
        assert_eq!(bytes, data);
    }
});
