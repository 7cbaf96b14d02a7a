#![no_main]

use bicam::io::netpbm::{decode_ppm, encode_ppm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        let again = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(img, again);
    }
});
