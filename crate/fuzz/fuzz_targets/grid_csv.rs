#![no_main]

use bicam::io::grid::{decode_grid, encode_grid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode_grid(data) {
        let text = encode_grid(&grid).unwrap();
        assert_eq!(decode_grid(text.as_bytes()).unwrap(), grid);
    }
});
