//! Physics-based plume vetting: picks in-plume and matched background
//! pixel sets, fits a methane enhancement plus affine baseline to the
//! observed transmittance ratio, and scores the fit.

use thiserror::Error;

use crate::granule::FitScores;
use crate::grid::{Grid, MaskGrid};
use crate::hungarian::{hungarian_assign, HungarianError};
use crate::morph::squared_edt;
use crate::radiance::RadianceCube;
use crate::retrieval::{unit_absorption_spectrum, RetrievalError};
use crate::spectral::{MethaneLut, SpectralError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("plume mask is empty")]
    EmptyMask,
    #[error("no clean background pixels around the plume")]
    NoCleanBackground,
    #[error("background pool ({pool}) smaller than the in-plume set ({in_set})")]
    PoolTooSmall { pool: usize, in_set: usize },
    #[error("no methane fit bands available in the lookup table")]
    NoFitBands,
    #[error("mean spectra must be strictly positive on the fit bands")]
    NonPositiveMeans,
    #[error(transparent)]
    Hungarian(#[from] HungarianError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Pixel-selection and fit settings.
#[derive(Debug, Clone)]
pub struct FitParams {
    /// Fraction of the highest in-mask enhancements excluded up front.
    pub top_exclude_fraction: f64,
    /// Number of remaining top pixels whose 3x3 neighborhoods are used.
    pub top_pixels: usize,
    /// Background search radius around the mask (pixels).
    pub bg_dilation_px: f64,
    /// Background pixels above this enhancement are excluded (ppm-m).
    pub bg_max_enhancement_ppm_m: f64,
    /// Upper cap on the background pool fed to the matcher; larger pools
    /// are deterministically subsampled.
    pub max_bg_pool: usize,
    /// Golden-section search range and tolerance for the enhancement.
    pub fit_x_max_ppm_m: f64,
    pub fit_x_tol_ppm_m: f64,
    /// Methane manifold windows defining the fit bands (um).
    pub methane_windows_um: Vec<(f64, f64)>,
    /// Bands with unit absorption below this are "non-methane" bands.
    pub non_methane_k_max: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            top_exclude_fraction: 0.01,
            top_pixels: 30,
            bg_dilation_px: 200.0,
            bg_max_enhancement_ppm_m: 30.0,
            max_bg_pool: 2000,
            fit_x_max_ppm_m: 20_000.0,
            fit_x_tol_ppm_m: 0.1,
            methane_windows_um: vec![(1.6, 1.8), (2.1, 2.45)],
            non_methane_k_max: 1e-7,
        }
    }
}

/// Classification thresholds.
pub const D_COR_MAX: f64 = 0.4;
pub const D_NORM_MAX: f64 = 0.5;
pub const FIT_ENH_OVERRIDE_PPM_M: f64 = 100.0;

/// In-plume pixel set: drops the top 1% of enhancements inside the
/// mask, then unions the 3x3 neighborhoods of the 30 strongest
/// remaining pixels (clipped to the grid, deduplicated).
pub fn select_in_pixels(
    mask: &MaskGrid,
    enh: &Grid<f64>,
    params: &FitParams,
) -> Result<Vec<(usize, usize)>, FitError> {
    let mut pixels = mask.true_pixels();
    if pixels.is_empty() {
        return Err(FitError::EmptyMask);
    }
    pixels.sort_by(|a, b| {
        enh.get(b.0, b.1)
            .partial_cmp(&enh.get(a.0, a.1))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let drop = (params.top_exclude_fraction * pixels.len() as f64).floor() as usize;
    let remaining = &pixels[drop.min(pixels.len())..];
    let tops = &remaining[..remaining.len().min(params.top_pixels)];

    let (rows, cols) = mask.shape();
    let mut set = std::collections::BTreeSet::new();
    for &(r, c) in tops {
        for dr in -1_isize..=1 {
            for dc in -1_isize..=1 {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    set.insert((rr as usize, cc as usize));
                }
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Background pool: pixels within the dilation radius of the mask,
/// outside the mask itself and every other plume mask, with enhancement
/// at or below the background cap.
pub fn select_bg_pixels(
    mask: &MaskGrid,
    all_plume_masks: &[&MaskGrid],
    enh: &Grid<f64>,
    params: &FitParams,
) -> Result<Vec<(usize, usize)>, FitError> {
    if !mask.any() {
        return Err(FitError::EmptyMask);
    }
    let dist2 = squared_edt(mask);
    let (rows, cols) = mask.shape();
    let r2 = params.bg_dilation_px * params.bg_dilation_px;
    let mut pool = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let d2 = dist2[r * cols + c];
            if d2 <= 0.0 || d2 > r2 {
                continue;
            }
            if all_plume_masks.iter().any(|m| m.get(r, c)) {
                continue;
            }
            if enh.get(r, c) > params.bg_max_enhancement_ppm_m {
                continue;
            }
            pool.push((r, c));
        }
    }
    if pool.is_empty() {
        return Err(FitError::NoCleanBackground);
    }
    Ok(pool)
}

/// Pairs each in-plume pixel with its spectrally closest background
/// pixel (Euclidean distance over the non-methane bands, minimum-cost
/// assignment, each background pixel used at most once).
pub fn match_bg(
    in_pixels: &[(usize, usize)],
    pool: &[(usize, usize)],
    cube: &RadianceCube,
    non_methane_bands: &[usize],
) -> Result<Vec<((usize, usize), (usize, usize))>, FitError> {
    if pool.len() < in_pixels.len() {
        return Err(FitError::PoolTooSmall {
            pool: pool.len(),
            in_set: in_pixels.len(),
        });
    }
    let mut cost = Grid::zeros(in_pixels.len(), pool.len());
    for (i, &(ir, ic)) in in_pixels.iter().enumerate() {
        let a = cube.spectrum(ir, ic);
        for (j, &(br, bc)) in pool.iter().enumerate() {
            let b = cube.spectrum(br, bc);
            let mut d2 = 0.0;
            for &band in non_methane_bands {
                let d = a[band] - b[band];
                d2 += d * d;
            }
            cost.set(i, j, d2.sqrt());
        }
    }
    let assignment = hungarian_assign(&cost)?;
    Ok(assignment
        .pairs
        .iter()
        .map(|&(i, j)| (in_pixels[i], pool[j]))
        .collect())
}

/// Deterministically thins a pool to at most `cap` pixels (keeps at
/// least `floor` entries), striding evenly through the row-major order.
pub fn thin_pool(pool: Vec<(usize, usize)>, cap: usize, floor: usize) -> Vec<(usize, usize)> {
    let cap = cap.max(floor);
    if pool.len() <= cap {
        return pool;
    }
    let step = pool.len() as f64 / cap as f64;
    (0..cap)
        .map(|i| pool[(i as f64 * step) as usize])
        .collect()
}

/// Indices of bands inside the methane manifold windows.
pub fn fit_band_indices(lut: &MethaneLut, params: &FitParams) -> Vec<usize> {
    lut.band_centers_um()
        .iter()
        .enumerate()
        .filter(|(_, &c)| {
            params
                .methane_windows_um
                .iter()
                .any(|&(lo, hi)| c >= lo && c <= hi)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Indices of bands outside the manifolds with negligible absorption.
pub fn non_methane_band_indices(
    lut: &MethaneLut,
    plm: f64,
    params: &FitParams,
) -> Result<Vec<usize>, FitError> {
    let fit: std::collections::BTreeSet<usize> =
        fit_band_indices(lut, params).into_iter().collect();
    let sig = unit_absorption_spectrum(lut, plm)?;
    Ok((0..lut.bands())
        .filter(|b| !fit.contains(b) && sig.k[*b].abs() < params.non_methane_k_max)
        .collect())
}

/// Output of the least-squares enhancement fit.
#[derive(Debug, Clone)]
pub struct EnhancementFit {
    pub fit_enh: f64,
    /// Affine baseline evaluated as `a0 + a1 (lambda - lambda_mean)`.
    pub a0: f64,
    pub a1: f64,
    pub rho_obs: Vec<f64>,
    pub rho_fit: Vec<f64>,
    /// Band indices the fit ran over.
    pub fit_bands: Vec<usize>,
}

/// Fits `rho_b = (a0 + a1 lambda_b) ratio_b(x)` to the observed
/// in-plume/background ratio over the methane fit bands: golden-section
/// search over the enhancement with a closed-form linear solve for the
/// baseline at each step.
pub fn fit_enhancement(
    in_mean: &[f64],
    bg_mean: &[f64],
    lut: &MethaneLut,
    plm: f64,
    params: &FitParams,
) -> Result<EnhancementFit, FitError> {
    let bands = fit_band_indices(lut, params);
    if bands.is_empty() {
        return Err(FitError::NoFitBands);
    }
    for &b in &bands {
        if !(in_mean[b] > 0.0 && bg_mean[b] > 0.0) {
            return Err(FitError::NonPositiveMeans);
        }
    }
    let rho: Vec<f64> = bands.iter().map(|&b| in_mean[b] / bg_mean[b]).collect();
    let lambda_mean = bands
        .iter()
        .map(|&b| lut.band_centers_um()[b])
        .sum::<f64>()
        / bands.len() as f64;
    let lambdas: Vec<f64> = bands
        .iter()
        .map(|&b| lut.band_centers_um()[b] - lambda_mean)
        .collect();

    let mut scratch = vec![0.0; lut.bands()];
    let plm_min = lut.plm_axis()[0];
    let plm = plm.max(plm_min);
    // Residual and baseline for a candidate enhancement.
    let mut evaluate = |x: f64| -> (f64, f64, f64, Vec<f64>) {
        lut.query_log_ratio_into(x, plm, &mut scratch)
            .expect("x >= 0 within search range");
        let r: Vec<f64> = bands.iter().map(|&b| scratch[b].exp()).collect();
        // Least squares over (a0, a1) for rho ~ (a0 + a1 dl) r.
        let mut suu = 0.0;
        let mut suv = 0.0;
        let mut svv = 0.0;
        let mut sur = 0.0;
        let mut svr = 0.0;
        for ((&ri, &dl), &rho_i) in r.iter().zip(&lambdas).zip(&rho) {
            let u = ri;
            let v = dl * ri;
            suu += u * u;
            suv += u * v;
            svv += v * v;
            sur += u * rho_i;
            svr += v * rho_i;
        }
        let det = suu * svv - suv * suv;
        let (a0, a1) = if det.abs() > 1e-300 && bands.len() > 1 {
            ((svv * sur - suv * svr) / det, (suu * svr - suv * sur) / det)
        } else {
            (sur / suu, 0.0)
        };
        let fit: Vec<f64> = r
            .iter()
            .zip(&lambdas)
            .map(|(&ri, &dl)| (a0 + a1 * dl) * ri)
            .collect();
        let sse = fit
            .iter()
            .zip(&rho)
            .map(|(f, o)| (f - o) * (f - o))
            .sum::<f64>();
        (sse, a0, a1, fit)
    };

    // Coarse bracket over the search range (log-spaced plus zero), then
    // golden-section refinement inside the bracketing interval.
    let mut probes = vec![0.0];
    let n_probes = 24;
    for i in 0..=n_probes {
        let t = i as f64 / n_probes as f64;
        probes.push(10.0_f64.powf(t * (params.fit_x_max_ppm_m.log10() - 0.0)));
    }
    probes.retain(|&x| x <= params.fit_x_max_ppm_m);
    probes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_idx = 0;
    let mut best_sse = f64::INFINITY;
    for (i, &x) in probes.iter().enumerate() {
        let (sse, _, _, _) = evaluate(x);
        if sse < best_sse {
            best_sse = sse;
            best_idx = i;
        }
    }
    let mut lo = if best_idx == 0 { 0.0 } else { probes[best_idx - 1] };
    let mut hi = if best_idx + 1 < probes.len() {
        probes[best_idx + 1]
    } else {
        params.fit_x_max_ppm_m
    };

    const INV_PHI: f64 = 0.6180339887498949;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = evaluate(x1).0;
    let mut f2 = evaluate(x2).0;
    while hi - lo > params.fit_x_tol_ppm_m {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = evaluate(x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = evaluate(x2).0;
        }
    }
    let x_best = 0.5 * (lo + hi);
    let (_, a0, a1, fit) = evaluate(x_best);
    Ok(EnhancementFit {
        fit_enh: x_best,
        a0,
        a1,
        rho_obs: rho,
        rho_fit: fit,
        fit_bands: bands,
    })
}

/// Sentinel reported when a correlation is undefined (zero variance).
pub const D_COR_UNDEFINED: f64 = 2.0;

/// Fit-quality scores: correlation error `1 - pearson(fit, obs)` and
/// normalized error `rms(fit - obs) / rms(obs - 1)`.
pub fn fit_scores(rho_obs: &[f64], rho_fit: &[f64]) -> (f64, f64) {
    assert_eq!(rho_obs.len(), rho_fit.len());
    let n = rho_obs.len() as f64;
    let mo = rho_obs.iter().sum::<f64>() / n;
    let mf = rho_fit.iter().sum::<f64>() / n;
    let mut soo = 0.0;
    let mut sff = 0.0;
    let mut sof = 0.0;
    for (&o, &f) in rho_obs.iter().zip(rho_fit) {
        soo += (o - mo) * (o - mo);
        sff += (f - mf) * (f - mf);
        sof += (o - mo) * (f - mf);
    }
    let d_cor = if soo > 0.0 && sff > 0.0 {
        1.0 - sof / (soo * sff).sqrt()
    } else {
        D_COR_UNDEFINED
    };

    let rms = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        let mut total = 0.0;
        let mut count = 0_usize;
        for v in it {
            total += v * v;
            count += 1;
        }
        (total / count as f64).sqrt()
    };
    let num = rms(&mut rho_obs.iter().zip(rho_fit).map(|(o, f)| f - o));
    let den = rms(&mut rho_obs.iter().map(|o| o - 1.0));
    let d_norm = if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (d_cor, d_norm)
}

/// A detection is legitimate when both error scores pass, or when the
/// fitted enhancement alone is convincingly high.
pub fn classify(d_cor: f64, d_norm: f64, fit_enh: f64) -> bool {
    (d_norm < D_NORM_MAX && d_cor < D_COR_MAX) || fit_enh > FIT_ENH_OVERRIDE_PPM_M
}

/// Full result of one plume's vetting chain.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub scores: FitScores,
    pub fit: EnhancementFit,
    pub in_pixel_count: usize,
    pub bg_pool_count: usize,
}

/// Runs the full select -> match -> fit -> score chain for one plume
/// footprint against the granule cube and enhancement raster.
pub fn fit_plume(
    cube: &RadianceCube,
    enh_raster: &Grid<f64>,
    mask: &MaskGrid,
    other_masks: &[&MaskGrid],
    lut: &MethaneLut,
    plm: f64,
    params: &FitParams,
) -> Result<FitOutcome, FitError> {
    let in_pixels = select_in_pixels(mask, enh_raster, params)?;
    let pool = select_bg_pixels(mask, other_masks, enh_raster, params)?;
    let bg_pool_count = pool.len();
    let pool = thin_pool(pool, params.max_bg_pool, in_pixels.len());
    let non_methane = non_methane_band_indices(lut, plm, params)?;
    let pairs = match_bg(&in_pixels, &pool, cube, &non_methane)?;

    let bands = cube.bands();
    let mut in_mean = vec![0.0; bands];
    let mut bg_mean = vec![0.0; bands];
    for &((ir, ic), (br, bc)) in &pairs {
        for (acc, &v) in in_mean.iter_mut().zip(cube.spectrum(ir, ic)) {
            *acc += v;
        }
        for (acc, &v) in bg_mean.iter_mut().zip(cube.spectrum(br, bc)) {
            *acc += v;
        }
    }
    let n = pairs.len() as f64;
    in_mean.iter_mut().for_each(|v| *v /= n);
    bg_mean.iter_mut().for_each(|v| *v /= n);

    let fit = fit_enhancement(&in_mean, &bg_mean, lut, plm, params)?;
    let (d_cor, d_norm) = fit_scores(&fit.rho_obs, &fit.rho_fit);
    let obs_enh = in_pixels
        .iter()
        .map(|&(r, c)| enh_raster.get(r, c))
        .sum::<f64>()
        / in_pixels.len() as f64;
    Ok(FitOutcome {
        scores: FitScores {
            fit_enh: fit.fit_enh,
            obs_enh,
            d_cor,
            d_norm,
            valid: classify(d_cor, d_norm, fit.fit_enh),
        },
        fit,
        in_pixel_count: in_pixels.len(),
        bg_pool_count,
    })
}
