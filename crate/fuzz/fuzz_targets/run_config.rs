#![no_main]

use bicam::io::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        assert_eq!(RunConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }
});
