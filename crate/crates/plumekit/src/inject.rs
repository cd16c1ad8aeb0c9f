//! Scales unit plumes to target emission rates and folds the resulting
//! methane absorption into radiance cubes through the lookup table.

use thiserror::Error;

use crate::grid::Grid;
use crate::radiance::RadianceCube;
use crate::sim::MMOL_TO_PPM_M;
use crate::spectral::{path_length_multiplier, MethaneLut, SpectralError};

use rand::Rng;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("emission rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("enhancement grid {got_rows}x{got_cols} not co-registered with cube {rows}x{cols}")]
    ShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("negative enhancement {value} at pixel ({row}, {col})")]
    NegativeEnhancement { row: usize, col: usize, value: f64 },
    #[error("lookup table covers {lut_bands} bands but cube has {cube_bands}")]
    BandMismatch { lut_bands: usize, cube_bands: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Molar mass of methane in kg/mol times seconds per hour; the divisor
/// converting kg/hr to mol/s.
pub const KG_PER_HR_PER_MOL_S: f64 = 3600.0 * (16.04 / 1000.0);

/// Converts an emission rate from kg/hr to mol/s.
pub fn kg_per_hr_to_mol_per_s(rate_kg_hr: f64) -> Result<f64, InjectError> {
    if rate_kg_hr < 0.0 || rate_kg_hr.is_nan() {
        return Err(InjectError::NegativeRate(rate_kg_hr));
    }
    Ok(rate_kg_hr / KG_PER_HR_PER_MOL_S)
}

/// Inverse of [`kg_per_hr_to_mol_per_s`].
pub fn mol_per_s_to_kg_per_hr(rate_mol_s: f64) -> f64 {
    rate_mol_s * KG_PER_HR_PER_MOL_S
}

/// Scales a unit-rate concentration field (mmol/m^2 at 1 mol/s) to the
/// ppm-m enhancement at `rate_mol_s`. Masks are unaffected by scaling.
pub fn scale_plume(conc_mmol: &Grid<f64>, rate_mol_s: f64) -> Grid<f64> {
    conc_mmol.map(|v| v * MMOL_TO_PPM_M * rate_mol_s)
}

/// Training enhancement bin edges in ppm-m; a bin is chosen uniformly,
/// then the target uniformly within it.
pub const TRAINING_INTENSITY_BINS: [f64; 8] =
    [100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, 12_800.0];

/// Draws a training target intensity (ppm-m).
pub fn sample_training_intensity(rng: &mut impl Rng) -> f64 {
    let bin = rng.gen_range(0..TRAINING_INTENSITY_BINS.len() - 1);
    rng.gen_range(TRAINING_INTENSITY_BINS[bin]..TRAINING_INTENSITY_BINS[bin + 1])
}

/// Evaluation emission range in kg/hr, sampled log-uniformly.
pub const EVAL_EMISSION_RANGE_KG_HR: (f64, f64) = (100.0, 10_000.0);

/// Draws an evaluation emission rate (kg/hr), log-uniform over the range.
pub fn sample_eval_emission(rng: &mut impl Rng) -> f64 {
    let lo = EVAL_EMISSION_RANGE_KG_HR.0.ln();
    let hi = EVAL_EMISSION_RANGE_KG_HR.1.ln();
    rng.gen_range(lo..hi).exp()
}

/// One plume to inject: a unit-rate concentration grid and its target
/// emission rate.
#[derive(Debug, Clone)]
pub struct InjectionSpec<'a> {
    pub conc_mmol: &'a Grid<f64>,
    pub emission_kg_per_hr: f64,
}

/// Viewing geometry for a tile: a single scalar pair or per-pixel
/// rasters.
#[derive(Debug, Clone)]
pub enum ZenithAngles {
    Scalar { solar_deg: f64, sat_deg: f64 },
    PerPixel { solar_deg: Grid<f64>, sat_deg: Grid<f64> },
}

impl ZenithAngles {
    pub fn nadir() -> Self {
        Self::Scalar {
            solar_deg: 0.0,
            sat_deg: 0.0,
        }
    }
}

/// Sums the plume enhancements (ppm-m) over all specs.
pub fn total_enhancement(
    specs: &[InjectionSpec<'_>],
    rows: usize,
    cols: usize,
) -> Result<Grid<f64>, InjectError> {
    let mut total = Grid::zeros(rows, cols);
    for spec in specs {
        if spec.emission_kg_per_hr < 0.0 {
            return Err(InjectError::NegativeRate(spec.emission_kg_per_hr));
        }
        if spec.conc_mmol.shape() != (rows, cols) {
            return Err(InjectError::ShapeMismatch {
                got_rows: spec.conc_mmol.rows(),
                got_cols: spec.conc_mmol.cols(),
                rows,
                cols,
            });
        }
        let rate_mol_s = kg_per_hr_to_mol_per_s(spec.emission_kg_per_hr)?;
        let scale = MMOL_TO_PPM_M * rate_mol_s;
        for (dst, src) in total.values_mut().iter_mut().zip(spec.conc_mmol.values()) {
            *dst += src * scale;
        }
    }
    Ok(total)
}

/// Applies Beer-Lambert absorption for the summed plume enhancements to
/// a radiance cube. Pixels with zero total enhancement are untouched
/// bit-exactly.
pub fn inject(
    cube: &RadianceCube,
    specs: &[InjectionSpec<'_>],
    zeniths: &ZenithAngles,
    lut: &MethaneLut,
) -> Result<RadianceCube, InjectError> {
    let enh = total_enhancement(specs, cube.rows(), cube.cols())?;
    inject_enhancement(cube, &enh, zeniths, lut)
}

/// Injects a precomputed total-enhancement field (ppm-m).
pub fn inject_enhancement(
    cube: &RadianceCube,
    enhancement_ppm_m: &Grid<f64>,
    zeniths: &ZenithAngles,
    lut: &MethaneLut,
) -> Result<RadianceCube, InjectError> {
    if enhancement_ppm_m.shape() != (cube.rows(), cube.cols()) {
        return Err(InjectError::ShapeMismatch {
            got_rows: enhancement_ppm_m.rows(),
            got_cols: enhancement_ppm_m.cols(),
            rows: cube.rows(),
            cols: cube.cols(),
        });
    }
    if lut.bands() != cube.bands() {
        return Err(InjectError::BandMismatch {
            lut_bands: lut.bands(),
            cube_bands: cube.bands(),
        });
    }
    for (r, c, v) in enhancement_ppm_m.iter_indexed() {
        if v < 0.0 || v.is_nan() {
            return Err(InjectError::NegativeEnhancement {
                row: r,
                col: c,
                value: v,
            });
        }
    }
    let scalar_plm = match zeniths {
        ZenithAngles::Scalar { solar_deg, sat_deg } => {
            Some(path_length_multiplier(*solar_deg, *sat_deg)?)
        }
        ZenithAngles::PerPixel { solar_deg, sat_deg } => {
            if solar_deg.shape() != (cube.rows(), cube.cols())
                || sat_deg.shape() != (cube.rows(), cube.cols())
            {
                return Err(InjectError::ShapeMismatch {
                    got_rows: solar_deg.rows(),
                    got_cols: solar_deg.cols(),
                    rows: cube.rows(),
                    cols: cube.cols(),
                });
            }
            None
        }
    };

    let mut out = cube.clone();
    let mut log_ratio = vec![0.0; lut.bands()];
    for r in 0..cube.rows() {
        for c in 0..cube.cols() {
            let enh = enhancement_ppm_m.get(r, c);
            if enh == 0.0 {
                continue;
            }
            let plm = match (&scalar_plm, zeniths) {
                (Some(p), _) => *p,
                (None, ZenithAngles::PerPixel { solar_deg, sat_deg }) => {
                    path_length_multiplier(solar_deg.get(r, c), sat_deg.get(r, c))?
                }
                _ => unreachable!(),
            };
            lut.query_log_ratio_into(enh, plm, &mut log_ratio)?;
            let spectrum = out.spectrum_mut(r, c);
            for (v, lr) in spectrum.iter_mut().zip(&log_ratio) {
                *v *= lr.exp();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::spectral::{build_lut, default_conc_axis, default_plm_axis, BandSrf, WavelengthGrid};
    use approx::assert_relative_eq;

    fn test_lut() -> MethaneLut {
        let pair = crate::spectral::synthetic_pair_on(
            WavelengthGrid::new(1.4, 0.00025, 4601).unwrap(),
        );
        let srfs = vec![
            BandSrf::new(1.55, 0.0085).unwrap(),
            BandSrf::new(1.67, 0.0085).unwrap(),
            BandSrf::new(2.30, 0.0085).unwrap(),
        ];
        build_lut(&pair, &srfs, default_conc_axis(), default_plm_axis()).unwrap()
    }

    #[test]
    fn rate_conversion_constants() {
        assert_relative_eq!(
            kg_per_hr_to_mol_per_s(57.744).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_eq!(kg_per_hr_to_mol_per_s(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            kg_per_hr_to_mol_per_s(100.0).unwrap(),
            100.0 / (3600.0 * (16.04 / 1000.0)),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            mol_per_s_to_kg_per_hr(kg_per_hr_to_mol_per_s(321.0).unwrap()),
            321.0,
            max_relative = 1e-12
        );
        assert!(kg_per_hr_to_mol_per_s(-1.0).is_err());
    }

    #[test]
    fn scaling_is_linear() {
        let conc = Grid::from_vec(1, 3, vec![0.0, 0.5, 2.0]);
        let one = scale_plume(&conc, 1.0);
        assert_eq!(one.values(), &[0.0, 12.0, 48.0]);
        let two = scale_plume(&conc, 2.0);
        for (a, b) in two.values().iter().zip(one.values()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(scale_plume(&conc, 0.0).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_intensity_bins_are_uniform() {
        let mut rng = stream(21, "intensity", 0);
        let mut hits = [0_usize; 7];
        for _ in 0..10_000 {
            let v = sample_training_intensity(&mut rng);
            assert!((100.0..12_800.0).contains(&v));
            let bin = TRAINING_INTENSITY_BINS
                .windows(2)
                .position(|w| v >= w[0] && v < w[1])
                .unwrap();
            hits[bin] += 1;
        }
        for h in hits {
            let freq = h as f64 / 10_000.0;
            assert!((freq - 1.0 / 7.0).abs() < 0.02, "bin frequency {freq}");
        }
        // Reproducible under the same stream.
        let a = sample_training_intensity(&mut stream(22, "intensity", 0));
        let b = sample_training_intensity(&mut stream(22, "intensity", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn eval_emissions_are_log_uniform() {
        let mut rng = stream(23, "emission", 0);
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_eval_emission(&mut rng)).collect();
        assert!(draws.iter().all(|&v| (100.0..10_000.0).contains(&v)));
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[draws.len() / 2];
        assert!((median - 1000.0).abs() < 50.0, "median {median}");
    }

    #[test]
    fn empty_spec_list_leaves_cube_unchanged() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(4, 4, &[1.0, 2.0, 3.0]);
        let out = inject(&cube, &[], &ZenithAngles::nadir(), &lut).unwrap();
        assert_eq!(out, cube);
    }

    #[test]
    fn absorption_is_band_selective() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(2, 2, &[1.0, 1.0, 1.0]);
        let conc = Grid::filled(2, 2, 500.0 / MMOL_TO_PPM_M / 1.0);
        let spec = InjectionSpec {
            conc_mmol: &conc,
            emission_kg_per_hr: mol_per_s_to_kg_per_hr(1.0),
        };
        let out = inject(&cube, &[spec], &ZenithAngles::nadir(), &lut).unwrap();
        let s = out.spectrum(0, 0);
        // Band 0 (1.55 um window) nearly untouched, methane bands darken.
        assert!((s[0] - 1.0).abs() < 1e-6);
        assert!(s[1] < 1.0 - 1e-4);
        assert!(s[2] < s[1]);
    }

    #[test]
    fn overlapping_plumes_sum_before_the_table() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(2, 2, &[1.0, 1.0, 1.0]);
        let conc = Grid::filled(2, 2, 300.0 / MMOL_TO_PPM_M);
        let one_rate = mol_per_s_to_kg_per_hr(1.0);
        let two = inject(
            &cube,
            &[
                InjectionSpec {
                    conc_mmol: &conc,
                    emission_kg_per_hr: one_rate,
                },
                InjectionSpec {
                    conc_mmol: &conc,
                    emission_kg_per_hr: one_rate,
                },
            ],
            &ZenithAngles::nadir(),
            &lut,
        )
        .unwrap();
        let conc600 = Grid::filled(2, 2, 600.0 / MMOL_TO_PPM_M);
        let single = inject(
            &cube,
            &[InjectionSpec {
                conc_mmol: &conc600,
                emission_kg_per_hr: one_rate,
            }],
            &ZenithAngles::nadir(),
            &lut,
        )
        .unwrap();
        assert_eq!(two, single);
    }

    #[test]
    fn zero_enhancement_pixels_are_bit_exact() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(2, 2, &[0.123456789, 1.0, 0.5]);
        let mut conc = Grid::zeros(2, 2);
        conc.set(0, 0, 10.0);
        let spec = InjectionSpec {
            conc_mmol: &conc,
            emission_kg_per_hr: 1000.0,
        };
        let out = inject(&cube, &[spec], &ZenithAngles::nadir(), &lut).unwrap();
        assert_eq!(out.spectrum(1, 1), cube.spectrum(1, 1));
        assert_ne!(out.spectrum(0, 0), cube.spectrum(0, 0));
    }

    #[test]
    fn monotone_in_enhancement() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(1, 1, &[1.0, 1.0, 1.0]);
        let mut prev = f64::INFINITY;
        for enh in [0.0, 100.0, 500.0, 2000.0, 8000.0] {
            let grid = Grid::filled(1, 1, enh);
            let out = inject_enhancement(&cube, &grid, &ZenithAngles::nadir(), &lut).unwrap();
            let methane_band = out.spectrum(0, 0)[2];
            assert!(methane_band <= prev);
            prev = methane_band;
        }
    }

    #[test]
    fn per_pixel_zeniths_match_scalar_on_uniform_rasters() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(3, 3, &[1.0, 1.0, 1.0]);
        let conc = Grid::filled(3, 3, 20.0);
        let spec = [InjectionSpec {
            conc_mmol: &conc,
            emission_kg_per_hr: 500.0,
        }];
        let scalar = inject(
            &cube,
            &spec,
            &ZenithAngles::Scalar {
                solar_deg: 30.0,
                sat_deg: 10.0,
            },
            &lut,
        )
        .unwrap();
        let per_pixel = inject(
            &cube,
            &spec,
            &ZenithAngles::PerPixel {
                solar_deg: Grid::filled(3, 3, 30.0),
                sat_deg: Grid::filled(3, 3, 10.0),
            },
            &lut,
        )
        .unwrap();
        assert_eq!(scalar, per_pixel);
    }

    #[test]
    fn negative_enhancement_is_rejected() {
        let lut = test_lut();
        let cube = RadianceCube::from_spectrum(1, 1, &[1.0, 1.0, 1.0]);
        let grid = Grid::filled(1, 1, -5.0);
        assert!(matches!(
            inject_enhancement(&cube, &grid, &ZenithAngles::nadir(), &lut),
            Err(InjectError::NegativeEnhancement { .. })
        ));
    }
}
