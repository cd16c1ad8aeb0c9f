//! Retrieval backends producing slot predictions for tiles: a
//! covariance-whitened matched filter and (via [`crate::io::external`])
//! externally supplied prediction rasters. Also the probability-map
//! post-processing shared by all backends.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::grid::{Grid, MaskGrid};
use crate::loss::SlotPrediction;
use crate::morph::{filter_small_components, split_components};
use crate::radiance::RadianceCube;
use crate::spectral::{MethaneLut, SpectralError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("lookup table concentration axis must contain 100 ppm-m")]
    MissingReferenceNode,
    #[error("cross-track group {position} has only {got} pixels; need at least {min}")]
    GroupTooSmall { position: u32, got: usize, min: usize },
    #[error("background covariance is singular even after shrinkage")]
    SingularCovariance,
    #[error("signature covers {sig_bands} bands but cube has {cube_bands}")]
    BandMismatch { sig_bands: usize, cube_bands: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Linearized per-band methane absorption around zero enhancement:
/// `exp(-k * x)` approximates the table ratio for small `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAbsorptionSpectrum {
    /// Absorption per ppm-m, one entry per band.
    pub k: Vec<f64>,
    /// Path-length multiplier the signature was derived at (after any
    /// clamping).
    pub plm: f64,
    /// True when the requested multiplier fell outside the table axis.
    pub clamped: bool,
}

/// Finite-difference absorption signature from the table between 0 and
/// 100 ppm-m. Out-of-axis multipliers clamp to the axis ends.
pub fn unit_absorption_spectrum(
    lut: &MethaneLut,
    plm: f64,
) -> Result<UnitAbsorptionSpectrum, RetrievalError> {
    const REF_CONC: f64 = 100.0;
    if !lut.conc_axis().contains(&REF_CONC) {
        return Err(RetrievalError::MissingReferenceNode);
    }
    let axis = lut.plm_axis();
    let clamped_plm = plm.clamp(axis[0], axis[axis.len() - 1]);
    let mut log_ratio = vec![0.0; lut.bands()];
    lut.query_log_ratio_into(REF_CONC, clamped_plm, &mut log_ratio)?;
    Ok(UnitAbsorptionSpectrum {
        k: log_ratio.iter().map(|lr| -lr / REF_CONC).collect(),
        plm: clamped_plm,
        clamped: clamped_plm != plm,
    })
}

/// Minimum pixels required per cross-track group for covariance
/// estimation.
pub const MIN_GROUP_PIXELS: usize = 50;

/// Covariance shrinkage weight toward the scaled identity.
pub const COVARIANCE_SHRINKAGE: f64 = 0.05;

/// Classical matched filter, whitened per cross-track column group.
///
/// For each group: mean `mu` and covariance of the group's spectra, with
/// shrinkage `S' = (1-a) S + a tr(S)/B I`; target `t = -mu .* k`; the
/// per-pixel estimate is `(x-mu)' S'^-1 t / (t' S'^-1 t)` in ppm-m.
pub fn matched_filter(
    cube: &RadianceCube,
    sig: &UnitAbsorptionSpectrum,
) -> Result<Grid<f64>, RetrievalError> {
    let bands = cube.bands();
    if sig.k.len() != bands {
        return Err(RetrievalError::BandMismatch {
            sig_bands: sig.k.len(),
            cube_bands: bands,
        });
    }

    // Columns sharing a cross-track id form one statistics group.
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = std::collections::BTreeMap::new();
    for (col, &id) in cube.crosstrack_ids().iter().enumerate() {
        groups.entry(id).or_default().push(col);
    }

    let mut out = Grid::zeros(cube.rows(), cube.cols());
    for (&position, cols) in &groups {
        let n = cols.len() * cube.rows();
        if n < MIN_GROUP_PIXELS {
            return Err(RetrievalError::GroupTooSmall {
                position,
                got: n,
                min: MIN_GROUP_PIXELS,
            });
        }

        let mut mean = DVector::<f64>::zeros(bands);
        for &col in cols {
            for row in 0..cube.rows() {
                for (m, &v) in mean.iter_mut().zip(cube.spectrum(row, col)) {
                    *m += v;
                }
            }
        }
        mean /= n as f64;

        let mut cov = DMatrix::<f64>::zeros(bands, bands);
        let mut centered = DVector::<f64>::zeros(bands);
        for &col in cols {
            for row in 0..cube.rows() {
                for (c, (&v, m)) in centered
                    .iter_mut()
                    .zip(cube.spectrum(row, col).iter().zip(mean.iter()))
                {
                    *c = v - m;
                }
                cov.syger(1.0, &centered, &centered, 1.0);
            }
        }
        cov /= n as f64;
        // Symmetrize: syger only filled the lower triangle.
        for r in 0..bands {
            for c in r + 1..bands {
                cov[(r, c)] = cov[(c, r)];
            }
        }
        let ridge = COVARIANCE_SHRINKAGE * cov.trace() / bands as f64;
        let mut shrunk = cov * (1.0 - COVARIANCE_SHRINKAGE);
        for d in 0..bands {
            shrunk[(d, d)] += ridge;
        }

        let target = DVector::from_iterator(bands, mean.iter().zip(&sig.k).map(|(m, k)| -m * k));
        let chol = Cholesky::new(shrunk).ok_or(RetrievalError::SingularCovariance)?;
        let whitened = chol.solve(&target);
        let denom = target.dot(&whitened);
        if !(denom > 0.0) {
            return Err(RetrievalError::SingularCovariance);
        }

        for &col in cols {
            for row in 0..cube.rows() {
                let spec = cube.spectrum(row, col);
                let mut score = 0.0;
                for ((&v, m), w) in spec.iter().zip(mean.iter()).zip(whitened.iter()) {
                    score += (v - m) * w;
                }
                out.set(row, col, score / denom);
            }
        }
    }
    Ok(out)
}

/// Enhancement (ppm-m) at which the matched-filter mask probability
/// saturates at the default 0.4 instance threshold: prob = enh / 125, so
/// 0.4 corresponds to 50 ppm-m.
pub const MF_PROB_SCALE_PPM_M: f64 = 125.0;

/// Matched-filter backend settings.
#[derive(Debug, Clone)]
pub struct MatchedFilterBackend {
    pub sig: UnitAbsorptionSpectrum,
    /// Components below this pixel area are dropped from the mask.
    pub min_component_px: usize,
    /// Slot count of the emitted predictions.
    pub slots: usize,
}

impl MatchedFilterBackend {
    pub fn new(sig: UnitAbsorptionSpectrum) -> Self {
        Self {
            sig,
            min_component_px: 36,
            slots: 10,
        }
    }

    /// Runs the filter and maps the result into slot 0: mask probability
    /// `enh / 125` (so the default 0.4 threshold keeps enhancements above
    /// 50 ppm-m), origin probability squared-normalized to each
    /// component's peak so the weighted centroid hugs the brightest core.
    pub fn predict(&self, cube: &RadianceCube) -> Result<SlotPrediction, RetrievalError> {
        let enh = matched_filter(cube, &self.sig)?;
        let rows = enh.rows();
        let cols = enh.cols();

        let mask_prob = enh.map(|v| (v / MF_PROB_SCALE_PPM_M).clamp(0.0, 1.0));
        let raw_mask = enh.map(|v| v > MF_PROB_SCALE_PPM_M * 0.4);
        let cleaned = filter_small_components(&raw_mask, self.min_component_px);

        let mut origin_prob = Grid::zeros(rows, cols);
        for comp in split_components(&cleaned) {
            let peak = comp
                .true_pixels()
                .iter()
                .map(|&(r, c)| enh.get(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            if peak <= 0.0 {
                continue;
            }
            for (r, c) in comp.true_pixels() {
                let p = (enh.get(r, c) / peak).clamp(0.0, 1.0);
                origin_prob.set(r, c, p * p);
            }
        }

        let mut pred = SlotPrediction::empty(self.slots, rows, cols);
        pred.enh[0] = enh.map(|v| v.max(0.0));
        pred.mask_prob[0] = mask_prob;
        pred.origin_prob[0] = origin_prob;
        Ok(pred)
    }
}

/// Thresholds each slot's mask probability at `thresh` (inclusive).
pub fn threshold_instances(pred: &SlotPrediction, thresh: f64) -> Vec<MaskGrid> {
    pred.mask_prob
        .iter()
        .map(|g| g.map(|p| p >= thresh))
        .collect()
}

/// Splits thresholded slot masks into 8-connected instances, dropping
/// components below `min_area`.
pub fn instance_masks(pred: &SlotPrediction, thresh: f64, min_area: usize) -> Vec<MaskGrid> {
    let mut out = Vec::new();
    for mask in threshold_instances(pred, thresh) {
        let cleaned = filter_small_components(&mask, min_area);
        out.extend(split_components(&cleaned));
    }
    out
}

/// Probability-weighted centroid (row, col) over pixels with probability
/// strictly above `thresh`; `None` when no pixel qualifies.
pub fn origin_centroid(origin_prob: &Grid<f64>, thresh: f64) -> Option<(f64, f64)> {
    let mut w_sum = 0.0;
    let mut r_sum = 0.0;
    let mut c_sum = 0.0;
    for (r, c, p) in origin_prob.iter_indexed() {
        if p > thresh {
            w_sum += p;
            r_sum += p * r as f64;
            c_sum += p * c as f64;
        }
    }
    (w_sum > 0.0).then(|| (r_sum / w_sum, c_sum / w_sum))
}

/// [`origin_centroid`] restricted to pixels inside `mask`.
pub fn origin_centroid_masked(
    origin_prob: &Grid<f64>,
    mask: &MaskGrid,
    thresh: f64,
) -> Option<(f64, f64)> {
    let mut w_sum = 0.0;
    let mut r_sum = 0.0;
    let mut c_sum = 0.0;
    for (r, c, p) in origin_prob.iter_indexed() {
        if p > thresh && mask.get(r, c) {
            w_sum += p;
            r_sum += p * r as f64;
            c_sum += p * c as f64;
        }
    }
    (w_sum > 0.0).then(|| (r_sum / w_sum, c_sum / w_sum))
}

/// Default operating threshold on plume mask probabilities.
pub const DEFAULT_PLUME_THRESHOLD: f64 = 0.4;

/// Alternate threshold that maximizes F1 on the synthetic test split.
pub const TEST_OPTIMAL_PLUME_THRESHOLD: f64 = 0.3;

/// Default threshold on origin probabilities.
pub const DEFAULT_ORIGIN_THRESHOLD: f64 = 0.3;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inject::{inject_enhancement, ZenithAngles};
    use crate::rng::stream;
    use crate::spectral::{
        build_lut, default_conc_axis, default_plm_axis, synthetic_pair_on, BandSrf, WavelengthGrid,
    };
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn test_bands() -> Vec<BandSrf> {
        [1.52, 1.58, 1.64, 1.67, 1.70, 2.10, 2.25, 2.30, 2.35, 2.44]
            .iter()
            .map(|&c| BandSrf::new(c, 0.0085).unwrap())
            .collect()
    }

    fn test_lut() -> MethaneLut {
        let pair = synthetic_pair_on(WavelengthGrid::new(1.4, 0.00025, 4601).unwrap());
        build_lut(&pair, &test_bands(), default_conc_axis(), default_plm_axis()).unwrap()
    }

    fn noisy_cube(rows: usize, cols: usize, lut: &MethaneLut, seed: u64, noise: f64) -> RadianceCube {
        // Flat-spectrum background with multiplicative Gaussian noise.
        let mut rng = stream(seed, "mf-bg", 0);
        let gauss = Normal::new(1.0, noise).unwrap();
        let base: Vec<f64> = (0..lut.bands()).map(|b| 2.0 + 0.1 * b as f64).collect();
        let mut cube = RadianceCube::from_spectrum(rows, cols, &base);
        // One statistics group per half swath.
        let ids: Vec<u32> = (0..cols).map(|c| (2 * c / cols) as u32).collect();
        cube.set_crosstrack_ids(ids).unwrap();
        for v in cube.values_mut() {
            *v *= gauss.sample(&mut rng);
        }
        cube
    }

    #[test]
    fn unit_absorption_matches_table_by_definition() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 2.0).unwrap();
        assert!(!sig.clamped);
        let ratio = lut.query_ratio(100.0, 2.0).unwrap();
        for (k, r) in sig.k.iter().zip(&ratio) {
            assert_relative_eq!((-k * 100.0).exp(), *r, max_relative = 1e-12);
        }
        // Bands away from the methane manifolds carry ~zero absorption.
        assert!(sig.k[0].abs() < 1e-6, "1.52 um band: {}", sig.k[0]);
        // Methane bands absorb.
        assert!(sig.k[7] > 1e-5, "2.30 um band: {}", sig.k[7]);
    }

    #[test]
    fn unit_absorption_clamps_out_of_axis_multipliers() {
        let lut = test_lut();
        let hi = unit_absorption_spectrum(&lut, 500.0).unwrap();
        assert!(hi.clamped);
        assert_eq!(hi.plm, 100.0);
        let lo = unit_absorption_spectrum(&lut, 0.2).unwrap();
        assert!(lo.clamped);
        assert_eq!(lo.plm, 1.0);
    }

    #[test]
    fn unit_absorption_near_linearity() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 1.0).unwrap();
        let r1000 = lut.query_ratio(1000.0, 1.0).unwrap();
        for (b, (&k, &r)) in sig.k.iter().zip(&r1000).enumerate() {
            if k < 1e-6 {
                continue; // window band, secant undefined territory
            }
            let secant = -r.ln() / 1000.0;
            let gap = (k - secant).abs() / k;
            assert!(gap < 0.10, "band {b}: tangent {k} vs secant {secant}");
        }
    }

    #[test]
    fn matched_filter_null_background_is_unbiased() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 2.0).unwrap();
        let cube = noisy_cube(48, 48, &lut, 7, 0.01);
        let grid = matched_filter(&cube, &sig).unwrap();
        // Column-group mean of (x - mu) is identically zero, so the
        // score average vanishes up to rounding.
        let mean = grid.sum() / grid.values().len() as f64;
        let std = (grid.values().iter().map(|v| v * v).sum::<f64>()
            / grid.values().len() as f64)
            .sqrt();
        assert!(mean.abs() < 1e-9 * std.max(1.0), "mean {mean}, std {std}");
        assert!(std > 0.0);
    }

    #[test]
    fn matched_filter_recovers_injected_enhancement() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 2.0).unwrap();
        let cube = noisy_cube(64, 64, &lut, 11, 0.005);
        // Uniform 500 ppm-m square in the middle.
        let mut enh = Grid::zeros(64, 64);
        for r in 24..40 {
            for c in 24..40 {
                enh.set(r, c, 500.0);
            }
        }
        let injected = inject_enhancement(
            &cube,
            &enh,
            &ZenithAngles::Scalar {
                solar_deg: 45.0,
                sat_deg: 32.0,
            },
            &lut,
        )
        .unwrap();
        // plm(45, 32) = 2.593; the signature is evaluated nearby.
        let grid = matched_filter(&injected, &sig).unwrap();
        let mut in_mean = 0.0;
        for r in 24..40 {
            for c in 24..40 {
                in_mean += grid.get(r, c);
            }
        }
        in_mean /= 256.0;
        // Path multiplier mismatch (2.0 vs 2.59) scales the retrieval;
        // compare against the geometry-corrected expectation.
        let plm_true = crate::spectral::path_length_multiplier(45.0, 32.0).unwrap();
        let expected = 500.0 * plm_true / 2.0;
        assert_relative_eq!(in_mean, expected, max_relative = 0.10);

        // Linearity: doubling the enhancement doubles the retrieval.
        let enh2 = enh.map(|v| 2.0 * v);
        let injected2 = inject_enhancement(
            &cube,
            &enh2,
            &ZenithAngles::Scalar {
                solar_deg: 45.0,
                sat_deg: 32.0,
            },
            &lut,
        )
        .unwrap();
        let grid2 = matched_filter(&injected2, &sig).unwrap();
        let mut in_mean2 = 0.0;
        for r in 24..40 {
            for c in 24..40 {
                in_mean2 += grid2.get(r, c);
            }
        }
        in_mean2 /= 256.0;
        assert_relative_eq!(in_mean2, 2.0 * in_mean, max_relative = 0.05);
    }

    #[test]
    fn matched_filter_is_scale_equivariant() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 2.0).unwrap();
        let cube = noisy_cube(32, 32, &lut, 13, 0.01);
        let grid_a = matched_filter(&cube, &sig).unwrap();
        let mut scaled = cube.clone();
        for v in scaled.values_mut() {
            *v *= 3.5;
        }
        let grid_b = matched_filter(&scaled, &sig).unwrap();
        for (a, b) in grid_a.values().iter().zip(grid_b.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn matched_filter_input_validation() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 1.0).unwrap();
        // Too few pixels per group.
        let tiny = RadianceCube::from_spectrum(4, 4, &vec![1.0; lut.bands()]);
        assert!(matches!(
            matched_filter(&tiny, &sig),
            Err(RetrievalError::GroupTooSmall { .. })
        ));
        // Constant cube: zero covariance survives shrinkage as singular.
        let flat = RadianceCube::from_spectrum(64, 64, &vec![1.0; lut.bands()]);
        let mut ids = vec![0_u32; 64];
        ids.iter_mut().enumerate().for_each(|(i, v)| *v = (i / 64) as u32);
        let mut flat = flat;
        flat.set_crosstrack_ids(ids).unwrap();
        assert!(matches!(
            matched_filter(&flat, &sig),
            Err(RetrievalError::SingularCovariance)
        ));
        // Band mismatch.
        let wrong = RadianceCube::from_spectrum(64, 64, &[1.0, 2.0]);
        assert!(matches!(
            matched_filter(&wrong, &sig),
            Err(RetrievalError::BandMismatch { .. })
        ));
    }

    #[test]
    fn threshold_instances_behaviour() {
        let half = Grid::filled(4, 4, 0.5);
        let pred = SlotPrediction::new(
            vec![Grid::zeros(4, 4)],
            vec![half],
            vec![Grid::zeros(4, 4)],
        )
        .unwrap();
        assert_eq!(threshold_instances(&pred, 0.4)[0].count_true(), 16);
        assert_eq!(threshold_instances(&pred, 0.6)[0].count_true(), 0);
        // Monotonicity: raising the threshold never grows a mask.
        let mut rng = stream(17, "thresh", 0);
        let probs = Grid::from_fn(8, 8, |_, _| rng.gen::<f64>());
        let pred = SlotPrediction::new(
            vec![Grid::zeros(8, 8)],
            vec![probs],
            vec![Grid::zeros(8, 8)],
        )
        .unwrap();
        let mut prev = usize::MAX;
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let n = threshold_instances(&pred, t)[0].count_true();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn origin_centroid_examples() {
        // Single qualifying pixel.
        let mut g = Grid::zeros(5, 5);
        g.set(2, 3, 0.9);
        assert_eq!(origin_centroid(&g, 0.3), Some((2.0, 3.0)));

        // Two pixels at columns 0 and 1 with probs 0.6 and 0.9.
        let mut g = Grid::zeros(1, 2);
        g.set(0, 0, 0.6);
        g.set(0, 1, 0.9);
        let (_, c) = origin_centroid(&g, 0.3).unwrap();
        assert_relative_eq!(c, 0.6, epsilon = 1e-12);

        // Symmetric disc of equal probabilities centers itself.
        let disc = crate::loss::origin_disc(21, 21, (10.0, 10.0), 6.0);
        let probs = disc.map(|b| if b { 0.8 } else { 0.0 });
        let (r, c) = origin_centroid(&probs, 0.3).unwrap();
        assert_relative_eq!(r, 10.0, epsilon = 1e-9);
        assert_relative_eq!(c, 10.0, epsilon = 1e-9);

        // Nothing qualifies.
        assert_eq!(origin_centroid(&Grid::zeros(3, 3), 0.3), None);

        // Centroid stays in the convex hull of qualifying pixels.
        let mut rng = stream(19, "centroid", 0);
        for _ in 0..20 {
            let g = Grid::from_fn(6, 6, |_, _| rng.gen::<f64>());
            if let Some((r, c)) = origin_centroid(&g, 0.5) {
                assert!((0.0..=5.0).contains(&r) && (0.0..=5.0).contains(&c));
            }
        }
    }

    #[test]
    fn backend_maps_filter_into_slot_zero() {
        let lut = test_lut();
        let sig = unit_absorption_spectrum(&lut, 2.0).unwrap();
        let cube = noisy_cube(64, 64, &lut, 23, 0.003);
        let mut enh = Grid::zeros(64, 64);
        for r in 20..36 {
            for c in 20..36 {
                enh.set(r, c, 800.0);
            }
        }
        let injected = inject_enhancement(
            &cube,
            &enh,
            &ZenithAngles::Scalar {
                solar_deg: 0.0,
                sat_deg: 0.0,
            },
            &lut,
        )
        .unwrap();
        let backend = MatchedFilterBackend::new(unit_absorption_spectrum(&lut, 2.0).unwrap());
        let pred = backend.predict(&injected).unwrap();
        assert_eq!(pred.slots(), 10);
        assert!(pred.enh[1].sum() == 0.0);

        let instances = instance_masks(&pred, DEFAULT_PLUME_THRESHOLD, 36);
        assert_eq!(instances.len(), 1, "one clean instance expected");
        let origin = origin_centroid_masked(
            &pred.origin_prob[0],
            &instances[0],
            DEFAULT_ORIGIN_THRESHOLD,
        );
        assert!(origin.is_some());
        let _ = sig;
    }
}
