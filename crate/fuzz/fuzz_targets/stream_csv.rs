#![no_main]

use libfuzzer_sys::fuzz_target;
use manifold_cca::datagen::{read_stream_csv, ViewSplit};

// First byte picks the view widths and header flag; the rest is the file.
fuzz_target!(|data: &[u8]| {
    let Some((&ctl, body)) = data.split_first() else {
        return;
    };
    let n = 1 + (ctl & 0x07) as usize;
    let m = 1 + ((ctl >> 3) & 0x07) as usize;
    let header = ctl & 0x40 != 0;
    let split = ViewSplit::contiguous(n, m);
    if let Ok(stream) = read_stream_csv(body, &split, header) {
        for (x, y) in stream.iter() {
            assert_eq!((x.len(), y.len()), (n, m));
            assert!(x.iter().chain(y.iter()).all(|v| v.is_finite()));
        }
    }
});
