//! Shared fixtures for the integration suites.

use std::sync::OnceLock;

use plumekit::grid::Grid;
use plumekit::inject::{inject, InjectionSpec, ZenithAngles};
use plumekit::loss::SlotPrediction;
use plumekit::metrics::GtInstance;
use plumekit::retrieval::{unit_absorption_spectrum, MatchedFilterBackend};
use plumekit::rng::stream;
use plumekit::sim::{
    crop_tile, mmol_to_ppm_m, simulate_plume, CropMode, SimConfig,
};
use plumekit::spectral::{path_length_multiplier, MethaneLut};
use plumekit::synth::{background_cube, swir_instrument, SceneParams, SyntheticInstrument};
use rand::Rng;

pub const SOLAR_ZENITH: f64 = 30.0;
pub const SAT_ZENITH: f64 = 10.0;
pub const BANDS: usize = 32;
pub const PIXEL_SIZE_M: f64 = 60.0;

pub fn instrument() -> &'static SyntheticInstrument {
    static INST: OnceLock<SyntheticInstrument> = OnceLock::new();
    INST.get_or_init(|| swir_instrument(BANDS))
}

pub fn lut() -> &'static MethaneLut {
    static LUT: OnceLock<MethaneLut> = OnceLock::new();
    LUT.get_or_init(|| instrument().build_lut())
}

/// One evaluation tile: slot predictions from the matched-filter
/// backend plus its ground truth.
pub struct EvalTile {
    pub pred: SlotPrediction,
    pub gt: Vec<GtInstance>,
}

/// Desk-scale detection fixture: 200 synthetic tiles with smooth noisy
/// backgrounds, 1-3 short-duration plumes each at log-uniform emission
/// rates, retrieved with the matched-filter backend.
pub fn detection_fixture() -> &'static Vec<EvalTile> {
    static TILES: OnceLock<Vec<EvalTile>> = OnceLock::new();
    TILES.get_or_init(build_detection_fixture)
}

fn build_detection_fixture() -> Vec<EvalTile> {
    use rayon::prelude::*;

    let inst = instrument();
    let lut = lut();
    let plm = path_length_multiplier(SOLAR_ZENITH, SAT_ZENITH).unwrap();
    let sig = unit_absorption_spectrum(lut, plm).unwrap();
    let backend = MatchedFilterBackend::new(sig);
    let zeniths = ZenithAngles::Scalar {
        solar_deg: SOLAR_ZENITH,
        sat_deg: SAT_ZENITH,
    };
    let scene = SceneParams {
        rows: 256,
        cols: 256,
        albedo_contrast: 0.25,
        noise_frac: 0.0025,
        ..SceneParams::default()
    };

    (0..200_usize)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(2024, "acceptance-tile", i as u64);
            let n_plumes = rng.gen_range(1..=3);
            // Short-duration plumes (first two duration buckets) keep
            // footprints compact; winds stay away from zero so ERBWS is
            // well defined.
            let wind = rng.gen_range(1.5..6.0);
            let config = SimConfig {
                num_plumes: n_plumes,
                plume_duration_s: rng.gen_range(250.0..900.0),
                mean_wind_speed_mps: wind,
                wind_direction_rad: rng.gen_range(0.0..std::f64::consts::TAU),
                diffusivity: rng.gen_range(30.0..50.0),
                center_relative_diff_scale: rng.gen_range(10.0..20.0),
                puff_initial_radius_m: rng.gen_range(3.0..20.0),
                puff_spread_rate: rng.gen_range(1.002..1.003),
                seed: rng.gen(),
                ..SimConfig::default()
            };
            // Origins inside the central crop with margin.
            let instances: Vec<_> = (0..n_plumes)
                .map(|p| {
                    let origin = (
                        rng.gen_range(150.0..230.0),
                        rng.gen_range(150.0..230.0),
                    );
                    let mut sim_rng = stream(2024, "acceptance-sim", (i * 8 + p) as u64);
                    simulate_plume(&config, origin, &mut sim_rng)
                        .map(|(inst, _)| inst)
                        .unwrap()
                })
                .collect();
            let cropped = crop_tile(
                &instances,
                256,
                CropMode::Center,
                &mut stream(2024, "acceptance-crop", i as u64),
            )
            .unwrap();

            let emissions: Vec<f64> = (0..n_plumes)
                .map(|_| plumekit::inject::sample_eval_emission(&mut rng))
                .collect();
            let rates_mol: Vec<f64> = emissions
                .iter()
                .map(|&e| plumekit::inject::kg_per_hr_to_mol_per_s(e).unwrap())
                .collect();

            let background = background_cube(inst, &scene, &mut rng);
            let specs: Vec<InjectionSpec<'_>> = cropped
                .plumes
                .iter()
                .zip(&emissions)
                .map(|(p, &rate)| InjectionSpec {
                    conc_mmol: &p.conc,
                    emission_kg_per_hr: rate,
                })
                .collect();
            let injected = inject(&background, &specs, &zeniths, lut).unwrap();
            let pred = backend.predict(&injected).unwrap();

            let gt = cropped
                .plumes
                .iter()
                .zip(&rates_mol)
                .zip(&emissions)
                .map(|((plume, &rate_mol), &rate_kg)| GtInstance {
                    enh: plume.conc.map(|v| mmol_to_ppm_m(v) * rate_mol),
                    mask: plume.mask.clone(),
                    origin_px: plume.origin_px,
                    erbws: Some(rate_kg / wind),
                })
                .collect();
            EvalTile { pred, gt }
        })
        .collect()
}

/// Flat-spectrum cube for LUT round-trip tests.
pub fn flat_cube(rows: usize, cols: usize) -> plumekit::RadianceCube {
    let base = instrument().base_spectrum();
    plumekit::RadianceCube::from_spectrum(rows, cols, &base)
}

/// Uniform square enhancement field.
pub fn square_enhancement(
    rows: usize,
    cols: usize,
    r0: usize,
    c0: usize,
    side: usize,
    value: f64,
) -> Grid<f64> {
    Grid::from_fn(rows, cols, |r, c| {
        if r >= r0 && r < r0 + side && c >= c0 && c < c0 + side {
            value
        } else {
            0.0
        }
    })
}
