#![no_main]

use bicam::pnr::{read_records, write_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(recs) = read_records(data) {
        let mut out = Vec::new();
        write_records(&recs, &mut out).unwrap();
        assert_eq!(read_records(out.as_slice()).unwrap(), recs);
    }
});
