#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::spectral::parse_srf_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_srf_csv(text);
    }
});
