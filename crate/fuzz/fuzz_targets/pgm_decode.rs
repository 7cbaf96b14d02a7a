#![no_main]

use bicam::io::netpbm::{decode_pgm, encode_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_pgm(data) {
        assert_eq!(decode_pgm(&encode_pgm(&mask)).unwrap(), mask);
    }
});
