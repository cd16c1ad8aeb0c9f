#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::io::geojson::records_from_geojson;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = records_from_geojson(text);
    }
});
