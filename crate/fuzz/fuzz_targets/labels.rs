#![no_main]

use libfuzzer_sys::fuzz_target;
use manifold_cca::datagen::read_labels;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = read_labels(data) {
        assert!(labels.windows(2).all(|w| w[0] < w[1]));
    }
});
