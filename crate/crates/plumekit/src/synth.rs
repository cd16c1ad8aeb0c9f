//! Synthetic scene fixtures: a compact SWIR instrument, its lookup
//! table, and smooth noisy background radiance cubes. Used by the
//! self-contained CLI paths and the test suites.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::noise::SimplexNoise;
use crate::radiance::{planck_spectral_radiance, RadianceCube, SOLAR_TEMP_K};
use crate::spectral::{
    build_lut, default_conc_axis, default_plm_axis, synthetic_pair_on, BandSrf, MethaneLut,
    TransmittancePair, WavelengthGrid,
};

/// A synthetic pushbroom instrument over the SWIR methane manifolds.
#[derive(Debug, Clone)]
pub struct SyntheticInstrument {
    pub grid: WavelengthGrid,
    pub srfs: Vec<BandSrf>,
    pub pair: TransmittancePair,
}

/// Builds the compact SWIR instrument: `bands` Gaussian bands spanning
/// 1.45-2.47 um on the native-resolution synthetic spectrum.
pub fn swir_instrument(bands: usize) -> SyntheticInstrument {
    let grid = WavelengthGrid::new(1.4, 0.00025, 4601).expect("valid grid");
    let lo = 1.45;
    let hi = 2.47;
    let step = (hi - lo) / (bands - 1) as f64;
    let srfs: Vec<BandSrf> = (0..bands)
        .map(|i| BandSrf::new(lo + step * i as f64, 0.0085).expect("valid band"))
        .collect();
    let pair = synthetic_pair_on(grid.clone());
    SyntheticInstrument { grid, srfs, pair }
}

impl SyntheticInstrument {
    /// Lookup table over the default axes.
    pub fn build_lut(&self) -> MethaneLut {
        build_lut(&self.pair, &self.srfs, default_conc_axis(), default_plm_axis())
            .expect("synthetic instrument is consistent")
    }

    /// Band-integrated background radiance shape: transmittance times
    /// the solar blackbody curve, scaled to order one.
    pub fn base_spectrum(&self) -> Vec<f64> {
        self.srfs
            .iter()
            .map(|srf| {
                let (i0, weights) = srf.sampled_weights(&self.grid).expect("band inside grid");
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    let lambda = self.grid.wavelength(i0 + k);
                    acc += w
                        * self.pair.t_std[i0 + k]
                        * planck_spectral_radiance(lambda, SOLAR_TEMP_K).expect("valid inputs");
                }
                acc * 4.0e-13 // bring the SI blackbody scale to O(1)
            })
            .collect()
    }
}

/// Background scene parameters.
#[derive(Debug, Clone)]
pub struct SceneParams {
    pub rows: usize,
    pub cols: usize,
    /// Smooth albedo field amplitude around 1 (0.3 means 0.7-1.3).
    pub albedo_contrast: f64,
    /// Per-pixel per-band multiplicative Gaussian noise sigma.
    pub noise_frac: f64,
    /// Cross-track striping gain amplitude (0 disables).
    pub stripe_amplitude: f64,
    /// Number of cross-track statistics groups.
    pub crosstrack_groups: usize,
    /// Spatial wavelength of the albedo field in pixels.
    pub albedo_wavelength_px: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            rows: 256,
            cols: 256,
            albedo_contrast: 0.25,
            noise_frac: 0.004,
            stripe_amplitude: 0.0,
            crosstrack_groups: 4,
            albedo_wavelength_px: 96.0,
        }
    }
}

/// Smooth noisy background cube: base spectrum times a simplex albedo
/// field, optional column striping, and per-pixel multiplicative noise.
pub fn background_cube(
    inst: &SyntheticInstrument,
    params: &SceneParams,
    rng: &mut impl Rng,
) -> RadianceCube {
    let base = inst.base_spectrum();
    let albedo_noise = SimplexNoise::new(rng.gen());
    let gauss = Normal::new(0.0, params.noise_frac).expect("positive sigma");
    let stripe_gain: Vec<f64> = (0..params.cols)
        .map(|c| 1.0 + params.stripe_amplitude * ((c as f64 * 0.7).sin()))
        .collect();

    let mut cube = RadianceCube::from_spectrum(params.rows, params.cols, &base);
    let groups = params.crosstrack_groups.max(1);
    let ids: Vec<u32> = (0..params.cols)
        .map(|c| (c * groups / params.cols) as u32)
        .collect();
    cube.set_crosstrack_ids(ids).expect("lengths match");

    for r in 0..params.rows {
        for c in 0..params.cols {
            let albedo = 1.0
                + params.albedo_contrast
                    * albedo_noise.sample_octaves2(
                        r as f64 / params.albedo_wavelength_px,
                        c as f64 / params.albedo_wavelength_px,
                        0.0,
                    );
            let gain = albedo.max(0.05) * stripe_gain[c];
            for v in cube.spectrum_mut(r, c) {
                *v *= gain * (1.0 + gauss.sample(rng));
            }
        }
    }
    cube
}

/// A synthetic granule with known injected plumes.
#[derive(Debug, Clone)]
pub struct GranuleFixture {
    pub cube: RadianceCube,
    /// Total injected enhancement (ppm-m).
    pub enhancement: crate::grid::Grid<f64>,
    /// True origins in granule pixel coordinates (row, col).
    pub origins: Vec<(f64, f64)>,
    pub emissions_kg_hr: Vec<f64>,
    /// Per-plume enhancement fields in granule coordinates.
    pub plume_enh: Vec<crate::grid::Grid<f64>>,
    pub solar_zenith_deg: f64,
    pub sat_zenith_deg: f64,
}

// Pastes `src` into `dst` with the given (row, col) offset, clipping at
// the destination bounds.
fn paste_add(
    dst: &mut crate::grid::Grid<f64>,
    src: &crate::grid::Grid<f64>,
    offset: (isize, isize),
) {
    for (r, c, v) in src.iter_indexed() {
        if v == 0.0 {
            continue;
        }
        let rr = r as isize + offset.0;
        let cc = c as isize + offset.1;
        if rr >= 0 && cc >= 0 && (rr as usize) < dst.rows() && (cc as usize) < dst.cols() {
            dst.set(rr as usize, cc as usize, dst.get(rr as usize, cc as usize) + v);
        }
    }
}

/// Builds a granule-scale test scene: a smooth noisy background with
/// three injected plumes, one overlapping pair (origins beyond the
/// consolidation distance) plus one isolated source.
pub fn granule_fixture(
    inst: &SyntheticInstrument,
    lut: &MethaneLut,
    size: usize,
    seed: u64,
) -> GranuleFixture {
    use crate::inject::{inject_enhancement, kg_per_hr_to_mol_per_s, ZenithAngles};
    use crate::rng::stream;
    use crate::sim::{mmol_to_ppm_m, simulate_plume, SimConfig};

    let solar_zenith_deg = 30.0;
    let sat_zenith_deg = 10.0;

    // Wind blows down-row, perpendicular to the pair axis: the two
    // plume tails spread laterally and overlap downstream while the
    // origin cores stay separated.
    let sim_base = SimConfig {
        sim_duration_s: 900.0,
        plume_duration_s: 450.0,
        mean_wind_speed_mps: 2.5,
        wind_direction_rad: std::f64::consts::FRAC_PI_2,
        diffusivity: 30.0,
        center_relative_diff_scale: 10.0,
        intermittent: false,
        puff_initial_radius_m: 12.0,
        ..SimConfig::default()
    };
    // Origins on the granule and emission rates; the first two sit 3 km
    // apart (beyond consolidation range) with downstream tail overlap.
    let sim_origin = 192.0_f64;
    let placements: [((f64, f64), f64); 3] = [
        ((150.0, 150.0), 3200.0),
        ((150.0, 200.0), 2800.0),
        ((360.0, 300.0), 3600.0),
    ];

    let mut enhancement = crate::grid::Grid::zeros(size, size);
    let mut origins = Vec::new();
    let mut emissions = Vec::new();
    let mut plume_enh = Vec::new();
    for (i, &((gr, gc), rate_kg_hr)) in placements.iter().enumerate() {
        let config = SimConfig {
            seed: seed ^ (i as u64 + 1),
            ..sim_base.clone()
        };
        let (inst_plume, _) = simulate_plume(
            &config,
            (sim_origin, sim_origin),
            &mut stream(seed, "granule-plume", i as u64),
        )
        .expect("origin inside grid");
        let rate_mol_s = kg_per_hr_to_mol_per_s(rate_kg_hr).expect("positive rate");
        let scaled = inst_plume
            .conc
            .map(|v| mmol_to_ppm_m(v) * rate_mol_s);
        let offset = (
            (gr - sim_origin).round() as isize,
            (gc - sim_origin).round() as isize,
        );
        let mut field = crate::grid::Grid::zeros(size, size);
        paste_add(&mut field, &scaled, offset);
        paste_add(&mut enhancement, &scaled, offset);
        plume_enh.push(field);
        origins.push((gr, gc));
        emissions.push(rate_kg_hr);
    }

    let params = SceneParams {
        rows: size,
        cols: size,
        ..SceneParams::default()
    };
    let background = background_cube(inst, &params, &mut stream(seed, "granule-bg", 0));
    let cube = inject_enhancement(
        &background,
        &enhancement,
        &ZenithAngles::Scalar {
            solar_deg: solar_zenith_deg,
            sat_deg: sat_zenith_deg,
        },
        lut,
    )
    .expect("fixture enhancement is valid");

    GranuleFixture {
        cube,
        enhancement,
        origins,
        emissions_kg_hr: emissions,
        plume_enh,
        solar_zenith_deg,
        sat_zenith_deg,
    }
}
