#![no_main]

use gncount::idx::{dataset_from_idx, MNIST_CLASSES};
use libfuzzer_sys::fuzz_target;

// First two bytes: big-endian split point between the image and label files.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = (u16::from_be_bytes([data[0], data[1]]) as usize).min(data.len() - 2);
    let (images, labels) = data[2..].split_at(split);
    if let Ok(ds) = dataset_from_idx(images, labels, MNIST_CLASSES) {
        assert_eq!(ds.len(), ds.labels.len());
        assert!(ds.labels.iter().all(|&l| l < MNIST_CLASSES));
    }
});
