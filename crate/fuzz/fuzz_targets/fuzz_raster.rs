#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::io::raster;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = raster::decode(data) {
        // Valid rasters re-encode and decode to the same cube.
        let bytes = raster::encode_cube(&r.cube, r.geo.as_ref(), raster::Dtype::F64);
        let again = raster::decode(&bytes).expect("re-encode is valid");
        assert_eq!(again.cube.rows(), r.cube.rows());
        assert_eq!(again.cube.cols(), r.cube.cols());
        assert_eq!(again.cube.bands(), r.cube.bands());
    }
});
