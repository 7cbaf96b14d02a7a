#![no_main]

use bicam::VisionTransformer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = VisionTransformer::from_bytes(data) {
        // Tensor order in the input is free, so compare canonical encodings.
        let bytes = m.to_bytes().unwrap();
        let again = VisionTransformer::from_bytes(&bytes).unwrap();
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
