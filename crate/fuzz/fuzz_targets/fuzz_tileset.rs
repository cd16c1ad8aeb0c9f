#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::io::tiles::TileSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = TileSet::decode(data) {
        let bytes = set.encode();
        let again = TileSet::decode(&bytes).expect("re-encode is valid");
        assert_eq!(set, again);
    }
});
