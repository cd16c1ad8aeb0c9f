//! Regenerates the seed corpus under fuzz/corpus/. Run from the
//! workspace root:
//!
//! ```text
//! cargo run -p plumekit --example make_fuzz_seeds
//! ```

use std::path::Path;

use plumekit::grid::{Grid, MaskGrid};
use plumekit::io::{raster, tiles};
use plumekit::spectral::{
    build_lut, default_conc_axis, default_plm_axis, srf_csv_string, synthetic_pair_on,
    transmittance_text_string, BandSrf, WavelengthGrid,
};
use plumekit::RadianceCube;

fn write(dir: &str, name: &str, bytes: &[u8]) {
    let root = Path::new("fuzz/corpus").join(dir);
    std::fs::create_dir_all(&root).expect("create corpus dir");
    std::fs::write(root.join(name), bytes).expect("write seed");
    println!("wrote fuzz/corpus/{dir}/{name} ({} bytes)", bytes.len());
}

fn main() {
    // Small but structurally complete spectral inputs.
    let grid = WavelengthGrid::new(2.25, 0.00025, 400).unwrap();
    let pair = synthetic_pair_on(grid.clone());
    write(
        "fuzz_transmittance_text",
        "std_atmosphere.txt",
        transmittance_text_string(&pair.grid, &pair.t_std).as_bytes(),
    );
    write(
        "fuzz_transmittance_text",
        "methane_atmosphere.txt",
        transmittance_text_string(&pair.grid, &pair.t_ch4_150).as_bytes(),
    );

    let srfs = vec![
        BandSrf::new(2.295, 0.0085).unwrap(),
        BandSrf::new(2.302, 0.0085).unwrap(),
    ];
    write("fuzz_srf_csv", "bands.csv", srf_csv_string(&srfs).as_bytes());

    let lut = build_lut(&pair, &srfs, default_conc_axis(), default_plm_axis()).unwrap();
    write("fuzz_lut_blob", "small_lut.bin", &lut.to_bytes());

    let table = plumekit::radiance::CrossTrackTable::new(
        vec![0, 1, 2],
        vec![1.0, 1.1, 0.95, 2.0, 2.1, 1.9],
        2,
    )
    .unwrap();
    write(
        "fuzz_crosstrack_csv",
        "table.csv",
        table.to_csv_string().as_bytes(),
    );

    let cube = RadianceCube::from_spectrum(4, 5, &[1.0, 2.0, 3.0]);
    let geo = raster::GeoTransform([10.0, 0.0005, 0.0, 48.0, 0.0, -0.0005]);
    write(
        "fuzz_raster",
        "cube_f32.pkr",
        &raster::encode_cube(&cube, Some(&geo), raster::Dtype::F32),
    );
    write(
        "fuzz_raster",
        "grid_f64.pkr",
        &raster::encode_grid(&Grid::from_fn(3, 3, |r, c| (r + c) as f64), None, raster::Dtype::F64),
    );

    let conc = Grid::from_fn(6, 6, |r, c| (r * 6 + c) as f64 * 0.25);
    let set = tiles::TileSet {
        tile_size: 6,
        pixel_size_m: 60.0,
        tiles: vec![tiles::Tile {
            plumes: vec![tiles::TilePlume {
                mask: conc.map(|v| v > 4.0),
                conc,
                origin_px: Some((2.0, 3.0)),
                emit_window_s: (2400.0, 3000.0),
            }],
            radiance: Some(RadianceCube::from_spectrum(6, 6, &[0.5, 0.7])),
            provenance: Some(serde_json::json!({
                "tile_id": "tile-00000",
                "wind_speed_mps": 3.5,
                "emissions_kg_hr": [750.0],
            })),
        }],
    };
    write("fuzz_tileset", "one_tile.bin", &set.encode());

    let manifest = serde_json::json!({
        "tile_id": "tile-00000",
        "rows": 8,
        "cols": 8,
        "slots": 2,
        "heads": {
            "enhancement": ["t_enhancement_00.pkr", "t_enhancement_01.pkr"],
            "mask": ["t_mask_00.pkr", "t_mask_01.pkr"],
            "origin": ["t_origin_00.pkr", "t_origin_01.pkr"],
        },
    });
    write(
        "fuzz_prediction_manifest",
        "manifest.json",
        &serde_json::to_vec_pretty(&manifest).unwrap(),
    );

    let record = plumekit::granule::PlumeRecord {
        id: 0,
        polygon_px: vec![(1.0, 1.0), (1.0, 4.0), (4.0, 4.0), (4.0, 1.0)],
        origin_px: (2.5, 2.5),
        peak_enhancement_ppm_m: 210.0,
        mean_enhancement_ppm_m: 95.0,
        area_px: 12,
        detection_fraction: 0.8,
        mask: MaskGrid::empty(6, 6),
        fit: Some(plumekit::granule::FitScores {
            fit_enh: 180.0,
            obs_enh: 160.0,
            d_cor: 0.05,
            d_norm: 0.2,
            valid: true,
        }),
        rejection: None,
    };
    let doc = plumekit::io::geojson::records_to_geojson(&[record], &[], None);
    write(
        "fuzz_geojson_records",
        "records.geojson",
        &serde_json::to_vec_pretty(&doc).unwrap(),
    );

    let config = plumekit::config::RunConfig::default();
    write(
        "fuzz_run_config",
        "defaults.conf",
        config.to_config_string().as_bytes(),
    );
}
