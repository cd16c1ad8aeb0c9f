#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::spectral::MethaneLut;

fuzz_target!(|data: &[u8]| {
    // Decoded tables must round-trip bit-exactly.
    if let Ok(lut) = MethaneLut::from_bytes(data) {
        let bytes = lut.to_bytes();
        let again = MethaneLut::from_bytes(&bytes).expect("re-encode is valid");
        assert_eq!(lut, again);
        // A decoded table must answer in-range queries.
        let _ = lut.query_ratio(500.0, lut.plm_axis()[0]);
    }
});
