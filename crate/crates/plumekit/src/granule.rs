//! Granule-scale inference: strided tile planning, Hanning-window
//! blending of overlapping predictions, consolidation of redundant
//! candidates into plume records, and the final record filters.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Grid, MaskGrid};
use crate::loss::SlotPrediction;
use crate::morph::{filter_small_components, split_components, trace_boundary};
use crate::radiance::RadianceCube;
use crate::retrieval::{origin_centroid_masked, MatchedFilterBackend, RetrievalError};

#[derive(Debug, Error)]
pub enum GranuleError {
    #[error("granule {rows}x{cols} is smaller than one {tile}x{tile} tile")]
    GranuleTooSmall { rows: usize, cols: usize, tile: usize },
    #[error("window at ({row}, {col}) does not fit the mosaic or tile size")]
    BadWindow { row: usize, col: usize },
    #[error("no windows supplied to blend")]
    NoWindows,
    #[error("SNR background needs at least two pixels with nonzero variance")]
    DegenerateBackground,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Default inference tile edge (pixels).
pub const TILE_SIZE: usize = 256;

/// Default stride between window origins (pixels), giving 75% overlap.
pub const TILE_STRIDE: usize = 64;

/// Strided window layout over a granule.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub tile_size: usize,
    pub stride: usize,
    /// Window top-left corners (row, col).
    pub origins: Vec<(usize, usize)>,
}

/// Plans 256 px windows at 64 px stride with the final window clamped
/// flush to each edge.
pub fn plan_tiles(rows: usize, cols: usize) -> Result<TilePlan, GranuleError> {
    plan_tiles_with(rows, cols, TILE_SIZE, TILE_STRIDE)
}

pub fn plan_tiles_with(
    rows: usize,
    cols: usize,
    tile_size: usize,
    stride: usize,
) -> Result<TilePlan, GranuleError> {
    if rows < tile_size || cols < tile_size {
        return Err(GranuleError::GranuleTooSmall {
            rows,
            cols,
            tile: tile_size,
        });
    }
    let axis = |dim: usize| -> Vec<usize> {
        let mut positions: Vec<usize> = (0..)
            .map(|i| i * stride)
            .take_while(|&p| p + tile_size <= dim)
            .collect();
        let flush = dim - tile_size;
        if positions.last() != Some(&flush) {
            positions.push(flush);
        }
        positions
    };
    let row_starts = axis(rows);
    let col_starts = axis(cols);
    let mut origins = Vec::with_capacity(row_starts.len() * col_starts.len());
    for &r in &row_starts {
        for &c in &col_starts {
            origins.push((r, c));
        }
    }
    Ok(TilePlan {
        tile_size,
        stride,
        origins,
    })
}

impl TilePlan {
    /// Number of windows containing the given pixel.
    pub fn windows_covering(&self, row: usize, col: usize) -> usize {
        self.origins
            .iter()
            .filter(|&&(r, c)| {
                row >= r && row < r + self.tile_size && col >= c && col < c + self.tile_size
            })
            .count()
    }
}

/// Blended granule-scale enhancement raster plus the accumulated blend
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementMosaic {
    pub grid: Grid<f64>,
    pub weights: Grid<f64>,
}

// 1D Hann window floored away from zero so edge rows still contribute.
fn hann_window(n: usize) -> Vec<f64> {
    const FLOOR: f64 = 1e-6;
    (0..n)
        .map(|i| {
            let w = 0.5
                * (1.0 - (std::f64::consts::TAU * i as f64 / (n as f64 - 1.0)).cos());
            w.max(FLOOR)
        })
        .collect()
}

/// Merges overlapping window tiles into one raster using a separable
/// Hanning weight, normalizing per pixel by the accumulated weight.
pub fn hann_blend(
    windows: &[((usize, usize), Grid<f64>)],
    rows: usize,
    cols: usize,
    tile_size: usize,
) -> Result<EnhancementMosaic, GranuleError> {
    if windows.is_empty() {
        return Err(GranuleError::NoWindows);
    }
    let hann = hann_window(tile_size);
    let mut acc = Grid::zeros(rows, cols);
    let mut weights = Grid::zeros(rows, cols);
    for ((r0, c0), tile) in windows {
        if tile.shape() != (tile_size, tile_size) || r0 + tile_size > rows || c0 + tile_size > cols
        {
            return Err(GranuleError::BadWindow { row: *r0, col: *c0 });
        }
        for dr in 0..tile_size {
            for dc in 0..tile_size {
                let w = hann[dr] * hann[dc];
                let r = r0 + dr;
                let c = c0 + dc;
                acc.set(r, c, acc.get(r, c) + w * tile.get(dr, dc));
                weights.set(r, c, weights.get(r, c) + w);
            }
        }
    }
    let mut grid = Grid::zeros(rows, cols);
    for i in 0..rows * cols {
        let w = weights.values()[i];
        if w > 0.0 {
            grid.values_mut()[i] = acc.values()[i] / w;
        }
    }
    Ok(EnhancementMosaic { grid, weights })
}

/// One window-level detection before consolidation.
#[derive(Debug, Clone)]
pub struct PlumeCandidate {
    /// Origin estimate in granule pixel coordinates (row, col).
    pub origin_px: (f64, f64),
    /// Inclusive bounding box (row0, col0, row1, col1) in granule
    /// coordinates.
    pub bbox: (usize, usize, usize, usize),
    /// Enhancement patch over the bounding box.
    pub enh: Grid<f64>,
    /// Footprint mask over the bounding box.
    pub mask: MaskGrid,
    /// Index of the window that produced the candidate.
    pub window_id: usize,
}

impl PlumeCandidate {
    fn enh_at(&self, row: f64, col: f64) -> Option<f64> {
        let (r0, c0, r1, c1) = self.bbox;
        if row < r0 as f64 || col < c0 as f64 || row > r1 as f64 || col > c1 as f64 {
            return None;
        }
        Some(self.enh.get(row as usize - r0, col as usize - c0))
    }
}

/// Extracts candidates from one window's slot prediction: thresholded
/// slot masks split into components, each with an origin centroid.
/// Components without a qualifying origin pixel are dropped.
pub fn extract_candidates(
    window_id: usize,
    window_origin: (usize, usize),
    pred: &SlotPrediction,
    plume_threshold: f64,
    origin_threshold: f64,
    min_component_px: usize,
) -> Vec<PlumeCandidate> {
    let mut out = Vec::new();
    for slot in 0..pred.slots() {
        let mask = pred.mask_prob[slot].map(|p| p >= plume_threshold);
        let cleaned = filter_small_components(&mask, min_component_px);
        for comp in split_components(&cleaned) {
            let Some(origin) =
                origin_centroid_masked(&pred.origin_prob[slot], &comp, origin_threshold)
            else {
                continue;
            };
            let (r0, c0, r1, c1) = comp.bounding_box().expect("non-empty component");
            let h = r1 - r0 + 1;
            let w = c1 - c0 + 1;
            let enh = Grid::from_fn(h, w, |r, c| pred.enh[slot].get(r0 + r, c0 + c));
            let mask = MaskGrid::from_fn(h, w, |r, c| comp.get(r0 + r, c0 + c));
            out.push(PlumeCandidate {
                origin_px: (
                    origin.0 + window_origin.0 as f64,
                    origin.1 + window_origin.1 as f64,
                ),
                bbox: (
                    r0 + window_origin.0,
                    c0 + window_origin.1,
                    r1 + window_origin.0,
                    c1 + window_origin.1,
                ),
                enh,
                mask,
                window_id,
            });
        }
    }
    out
}

/// Consolidation thresholds.
#[derive(Debug, Clone)]
pub struct ConsolidationParams {
    pub max_origin_distance_m: f64,
    pub min_correlation: f64,
    /// Edge length of the origin-centered correlation patch (pixels).
    pub patch_size: usize,
    pub pixel_size_m: f64,
    pub ridge: f64,
}

impl Default for ConsolidationParams {
    fn default() -> Self {
        Self {
            max_origin_distance_m: 1500.0,
            min_correlation: 0.97,
            patch_size: 64,
            pixel_size_m: 60.0,
            ridge: 1e-6,
        }
    }
}

// Pearson correlation of origin-centered patches over offsets valid in
// both candidates. Identical patches count as perfectly correlated even
// when constant.
fn patch_correlation(a: &PlumeCandidate, b: &PlumeCandidate, patch_size: usize) -> f64 {
    let half = patch_size as f64 / 2.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for dr in 0..patch_size {
        for dc in 0..patch_size {
            let (or, oc) = (dr as f64 - half, dc as f64 - half);
            let va = a.enh_at(a.origin_px.0 + or, a.origin_px.1 + oc);
            let vb = b.enh_at(b.origin_px.0 + or, b.origin_px.1 + oc);
            if let (Some(x), Some(y)) = (va, vb) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    if xs.is_empty() {
        return -1.0;
    }
    let identical = xs
        .iter()
        .zip(&ys)
        .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300));
    if identical {
        return 1.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return -1.0;
    }
    sxy / (sxx * syy).sqrt()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Attach the larger root index under the smaller so cluster
            // labels do not depend on edge processing order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Groups candidates whose origins sit within the distance threshold and
/// whose origin-centered patches correlate above the threshold. Returns
/// clusters as candidate index lists (each sorted ascending; clusters
/// ordered by smallest member).
pub fn consolidate(
    candidates: &[PlumeCandidate],
    params: &ConsolidationParams,
) -> Vec<Vec<usize>> {
    let n = candidates.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let dr = (candidates[i].origin_px.0 - candidates[j].origin_px.0)
                * params.pixel_size_m;
            let dc = (candidates[i].origin_px.1 - candidates[j].origin_px.1)
                * params.pixel_size_m;
            if (dr * dr + dc * dc).sqrt() > params.max_origin_distance_m {
                continue;
            }
            if patch_correlation(&candidates[i], &candidates[j], params.patch_size)
                > params.min_correlation
            {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = uf.find(i);
        clusters.entry(root).or_default().push(i);
    }
    clusters.into_values().collect()
}

/// Spectral-fit scores attached to a record after vetting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitScores {
    pub fit_enh: f64,
    pub obs_enh: f64,
    pub d_cor: f64,
    pub d_norm: f64,
    pub valid: bool,
}

/// Why a record was removed by the final filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    Enhancement,
    Water,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::Enhancement => "enhancement",
            RejectionReason::Water => "water",
        }
    }
}

/// One consolidated granule-level detection.
#[derive(Debug, Clone)]
pub struct PlumeRecord {
    pub id: usize,
    /// Boundary ring of the footprint, pixel coordinates (row, col).
    pub polygon_px: Vec<(f64, f64)>,
    pub origin_px: (f64, f64),
    pub peak_enhancement_ppm_m: f64,
    pub mean_enhancement_ppm_m: f64,
    pub area_px: usize,
    /// Fraction of overlapping windows that detected the plume.
    pub detection_fraction: f64,
    /// Footprint mask in granule coordinates.
    pub mask: MaskGrid,
    pub fit: Option<FitScores>,
    pub rejection: Option<RejectionReason>,
}

/// Aggregates one cluster into a record: ridge-regularized weighted mean
/// of member enhancements over the joint bounding box, union footprint,
/// mean origin, and detection fraction normalized by the number of
/// windows covering the origin pixel.
pub fn aggregate_cluster(
    id: usize,
    candidates: &[PlumeCandidate],
    members: &[usize],
    plan: &TilePlan,
    granule_rows: usize,
    granule_cols: usize,
    params: &ConsolidationParams,
) -> PlumeRecord {
    let mut r0 = usize::MAX;
    let mut c0 = usize::MAX;
    let mut r1 = 0_usize;
    let mut c1 = 0_usize;
    for &m in members {
        let b = candidates[m].bbox;
        r0 = r0.min(b.0);
        c0 = c0.min(b.1);
        r1 = r1.max(b.2);
        c1 = c1.max(b.3);
    }

    let mut origin = (0.0, 0.0);
    for &m in members {
        origin.0 += candidates[m].origin_px.0;
        origin.1 += candidates[m].origin_px.1;
    }
    origin.0 /= members.len() as f64;
    origin.1 /= members.len() as f64;

    let mut mask = MaskGrid::empty(granule_rows, granule_cols);
    let mut blended = Grid::zeros(r1 - r0 + 1, c1 - c0 + 1);
    for pr in r0..=r1 {
        for pc in c0..=c1 {
            let mut num = 0.0;
            let mut den = params.ridge;
            for &m in members {
                let cand = &candidates[m];
                if let Some(v) = cand.enh_at(pr as f64, pc as f64) {
                    num += v;
                    den += 1.0;
                    let (br0, bc0, _, _) = cand.bbox;
                    if cand.mask.get(pr - br0, pc - bc0) {
                        mask.set(pr, pc, true);
                    }
                }
            }
            blended.set(pr - r0, pc - c0, num / den);
        }
    }

    let mut peak = f64::NEG_INFINITY;
    let mut mean = 0.0;
    let mut area = 0_usize;
    for (r, c, set) in mask.iter_indexed() {
        if set {
            let v = blended.get(r - r0, c - c0);
            peak = peak.max(v);
            mean += v;
            area += 1;
        }
    }
    mean /= area.max(1) as f64;

    let windows_here = plan
        .windows_covering(
            (origin.0.round() as usize).min(granule_rows - 1),
            (origin.1.round() as usize).min(granule_cols - 1),
        )
        .max(1);
    let distinct_windows: std::collections::BTreeSet<usize> =
        members.iter().map(|&m| candidates[m].window_id).collect();
    let detection_fraction =
        (distinct_windows.len() as f64 / windows_here as f64).min(1.0);

    let polygon_px = trace_boundary(&mask)
        .into_iter()
        .map(|(r, c)| (r as f64, c as f64))
        .collect();

    PlumeRecord {
        id,
        polygon_px,
        origin_px: origin,
        peak_enhancement_ppm_m: peak,
        mean_enhancement_ppm_m: mean,
        area_px: area,
        detection_fraction,
        mask,
        fit: None,
        rejection: None,
    }
}

/// Removes 8-connected components smaller than 36 pixels.
pub fn filter_components(mask: &MaskGrid) -> MaskGrid {
    filter_small_components(mask, MIN_COMPONENT_PX)
}

/// Component-size floor applied to thresholded masks.
pub const MIN_COMPONENT_PX: usize = 36;

/// Peak-enhancement floor for the final record filter (inclusive).
pub const MIN_PEAK_ENHANCEMENT_PPM_M: f64 = 50.0;

/// Outcome of the final filters: kept records, rejected records with
/// their reasons, and whether the water filter could run.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<PlumeRecord>,
    pub rejected: Vec<PlumeRecord>,
    pub water_filter_applied: bool,
}

/// Keeps records with peak enhancement at or above 50 ppm-m whose origin
/// is not on water. Without a water mask the water filter is skipped and
/// flagged.
pub fn final_filters(records: Vec<PlumeRecord>, water_mask: Option<&MaskGrid>) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for mut record in records {
        if record.peak_enhancement_ppm_m < MIN_PEAK_ENHANCEMENT_PPM_M {
            record.rejection = Some(RejectionReason::Enhancement);
            rejected.push(record);
            continue;
        }
        if let Some(water) = water_mask {
            let r = (record.origin_px.0.round() as usize).min(water.rows() - 1);
            let c = (record.origin_px.1.round() as usize).min(water.cols() - 1);
            if water.get(r, c) {
                record.rejection = Some(RejectionReason::Water);
                rejected.push(record);
                continue;
            }
        }
        kept.push(record);
    }
    FilterOutcome {
        kept,
        rejected,
        water_filter_applied: water_mask.is_some(),
    }
}

/// Plume signal-to-noise ratio: mean plume enhancement minus mean
/// background enhancement over the background standard deviation
/// (sample, n-1).
pub fn snr(plume_pixels: &[f64], background_pixels: &[f64]) -> Result<f64, GranuleError> {
    if background_pixels.len() < 2 {
        return Err(GranuleError::DegenerateBackground);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mb = mean(background_pixels);
    let var = background_pixels
        .iter()
        .map(|v| (v - mb) * (v - mb))
        .sum::<f64>()
        / (background_pixels.len() - 1) as f64;
    if var <= 0.0 {
        return Err(GranuleError::DegenerateBackground);
    }
    Ok((mean(plume_pixels) - mb) / var.sqrt())
}

/// Anything that can produce a slot prediction for a tile.
pub trait TilePredictor: Sync {
    fn predict_tile(
        &self,
        cube: &RadianceCube,
        window_origin: (usize, usize),
    ) -> Result<SlotPrediction, RetrievalError>;
}

impl TilePredictor for MatchedFilterBackend {
    fn predict_tile(
        &self,
        cube: &RadianceCube,
        _window_origin: (usize, usize),
    ) -> Result<SlotPrediction, RetrievalError> {
        self.predict(cube)
    }
}

/// Pipeline thresholds.
#[derive(Debug, Clone)]
pub struct GranuleParams {
    pub plume_threshold: f64,
    pub origin_threshold: f64,
    pub min_component_px: usize,
    pub min_peak_ppm_m: f64,
    pub consolidation: ConsolidationParams,
}

impl Default for GranuleParams {
    fn default() -> Self {
        Self {
            plume_threshold: crate::retrieval::DEFAULT_PLUME_THRESHOLD,
            origin_threshold: crate::retrieval::DEFAULT_ORIGIN_THRESHOLD,
            min_component_px: MIN_COMPONENT_PX,
            min_peak_ppm_m: MIN_PEAK_ENHANCEMENT_PPM_M,
            consolidation: ConsolidationParams::default(),
        }
    }
}

/// Full pipeline output.
#[derive(Debug)]
pub struct GranuleOutput {
    pub mosaic: EnhancementMosaic,
    pub outcome: FilterOutcome,
    pub candidate_count: usize,
    pub plan: TilePlan,
}

/// Runs strided inference over the granule, blends the summed slot
/// enhancements, consolidates candidates and applies the final filters.
/// Spectral-fit vetting is a separate stage (see [`crate::specfit`]).
pub fn run_granule(
    cube: &RadianceCube,
    predictor: &dyn TilePredictor,
    water_mask: Option<&MaskGrid>,
    params: &GranuleParams,
) -> Result<GranuleOutput, GranuleError> {
    let plan = plan_tiles(cube.rows(), cube.cols())?;
    let per_window: Vec<(usize, (usize, usize), SlotPrediction)> = plan
        .origins
        .par_iter()
        .enumerate()
        .map(|(id, &(r, c))| {
            let tile = cube.crop(r, c, plan.tile_size);
            predictor
                .predict_tile(&tile, (r, c))
                .map(|pred| (id, (r, c), pred))
        })
        .collect::<Result<_, _>>()?;

    let windows: Vec<((usize, usize), Grid<f64>)> = per_window
        .iter()
        .map(|(_, origin, pred)| (*origin, pred.total_enhancement()))
        .collect();
    let mosaic = hann_blend(&windows, cube.rows(), cube.cols(), plan.tile_size)?;

    let mut candidates = Vec::new();
    for (id, origin, pred) in &per_window {
        candidates.extend(extract_candidates(
            *id,
            *origin,
            pred,
            params.plume_threshold,
            params.origin_threshold,
            params.min_component_px,
        ));
    }

    let clusters = consolidate(&candidates, &params.consolidation);
    let records: Vec<PlumeRecord> = clusters
        .iter()
        .enumerate()
        .map(|(id, members)| {
            aggregate_cluster(
                id,
                &candidates,
                members,
                &plan,
                cube.rows(),
                cube.cols(),
                &params.consolidation,
            )
        })
        .collect();

    let outcome = final_filters(records, water_mask);
    Ok(GranuleOutput {
        mosaic,
        outcome,
        candidate_count: candidates.len(),
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn plan_examples() {
        let p = plan_tiles(256, 256).unwrap();
        assert_eq!(p.origins, vec![(0, 0)]);

        let p = plan_tiles(320, 256).unwrap();
        assert_eq!(p.origins, vec![(0, 0), (64, 0)]);

        assert!(plan_tiles(255, 900).is_err());
    }

    #[test]
    fn plan_covers_every_pixel_with_expected_multiplicity() {
        let p = plan_tiles(512, 512).unwrap();
        // (512-256)/64 + 1 = 5 windows per axis.
        assert_eq!(p.origins.len(), 25);
        for (r, c) in [(0, 0), (511, 511), (400, 3), (255, 255)] {
            assert!(p.windows_covering(r, c) >= 1, "pixel ({r},{c}) uncovered");
        }
        // Interior pixels see the full 4x4 window stack.
        assert_eq!(p.windows_covering(256, 256), 16);
    }

    #[test]
    fn blend_of_constant_windows_is_constant() {
        let plan = plan_tiles_with(96, 96, 32, 16).unwrap();
        let windows: Vec<_> = plan
            .origins
            .iter()
            .map(|&o| (o, Grid::filled(32, 32, 7.5)))
            .collect();
        let mosaic = hann_blend(&windows, 96, 96, 32).unwrap();
        for v in mosaic.grid.values() {
            assert!((v - 7.5).abs() < 1e-6);
        }
        for w in mosaic.weights.values() {
            assert!(*w > 0.0);
        }
    }

    #[test]
    fn blend_reconstructs_reference_mosaic() {
        let mut rng = stream(41, "blend", 0);
        let reference = Grid::from_fn(128, 160, |r, c| {
            (r as f64 * 0.13).sin() + (c as f64 * 0.07).cos() + rng.gen::<f64>() * 0.1
        });
        let plan = plan_tiles_with(128, 160, 64, 16).unwrap();
        let windows: Vec<_> = plan
            .origins
            .iter()
            .map(|&(r, c)| ((r, c), reference.crop(r, c, 64)))
            .collect();
        let mosaic = hann_blend(&windows, 128, 160, 64).unwrap();
        let mut max_dev = 0.0_f64;
        for (a, b) in mosaic.grid.values().iter().zip(reference.values()) {
            max_dev = max_dev.max((a - b).abs());
        }
        assert!(max_dev < 1e-6, "max deviation {max_dev}");
    }

    #[test]
    fn blend_single_window_is_identity() {
        let tile = Grid::from_fn(32, 32, |r, c| (r * 32 + c) as f64);
        let mosaic = hann_blend(&[((0, 0), tile.clone())], 32, 32, 32).unwrap();
        for (a, b) in mosaic.grid.values().iter().zip(tile.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn blend_overlap_stays_between_inputs() {
        let a = 2.0;
        let b = 6.0;
        let windows = vec![
            ((0_usize, 0_usize), Grid::filled(32, 32, a)),
            ((0, 16), Grid::filled(32, 32, b)),
        ];
        let mosaic = hann_blend(&windows, 32, 48, 32).unwrap();
        for c in 16..32 {
            for r in 0..32 {
                let v = mosaic.grid.get(r, c);
                assert!(v >= a - 1e-12 && v <= b + 1e-12, "({r},{c}) = {v}");
            }
        }
    }

    fn candidate_at(
        origin: (f64, f64),
        window_id: usize,
        value: impl Fn(usize, usize) -> f64,
    ) -> PlumeCandidate {
        let size = 21;
        let r0 = origin.0 as usize - size / 2;
        let c0 = origin.1 as usize - size / 2;
        PlumeCandidate {
            origin_px: origin,
            bbox: (r0, c0, r0 + size - 1, c0 + size - 1),
            enh: Grid::from_fn(size, size, &value),
            mask: MaskGrid::filled(size, size, true),
            window_id,
        }
    }

    #[test]
    fn consolidation_distance_and_correlation_rules() {
        let shape = |r: usize, c: usize| ((r as f64 - 10.0).powi(2) + (c as f64 - 10.0).powi(2)).exp_m1().recip().abs().min(100.0);
        // Identical candidates at the same origin merge.
        let a = candidate_at((100.0, 100.0), 0, shape);
        let b = candidate_at((100.0, 100.0), 1, shape);
        let clusters = consolidate(&[a, b], &ConsolidationParams::default());
        assert_eq!(clusters.len(), 1);

        // 2 km apart: distance rule splits them.
        let a = candidate_at((100.0, 100.0), 0, shape);
        let far = candidate_at((100.0, 100.0 + 2000.0 / 60.0), 1, shape);
        let clusters = consolidate(&[a, far], &ConsolidationParams::default());
        assert_eq!(clusters.len(), 2);

        // Identical patches 1 km apart merge; negating one splits (r = -1).
        let a = candidate_at((100.0, 100.0), 0, shape);
        let near = candidate_at((100.0, 100.0 + 1000.0 / 60.0), 1, shape);
        let clusters = consolidate(&[a.clone(), near], &ConsolidationParams::default());
        assert_eq!(clusters.len(), 1);

        let negated = candidate_at((100.0, 100.0 + 1000.0 / 60.0), 1, |r, c| -shape(r, c));
        let clusters = consolidate(&[a, negated], &ConsolidationParams::default());
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn consolidation_is_order_independent() {
        let shape = |r: usize, c: usize| (r * 3 + c) as f64;
        let c0 = candidate_at((50.0, 50.0), 0, shape);
        let c1 = candidate_at((50.0, 55.0), 1, shape);
        let c2 = candidate_at((50.0, 300.0), 2, shape);
        let forward = consolidate(
            &[c0.clone(), c1.clone(), c2.clone()],
            &ConsolidationParams::default(),
        );
        let reversed = consolidate(&[c2, c1, c0], &ConsolidationParams::default());
        let sizes = |cl: &[Vec<usize>]| {
            let mut v: Vec<usize> = cl.iter().map(|c| c.len()).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(sizes(&forward), sizes(&reversed));
    }

    #[test]
    fn boundary_1500m_and_correlation_0p97() {
        let shape = |r: usize, c: usize| (r as f64 * 0.37).sin() + (c as f64 * 0.53).cos();
        // Exactly 1500 m apart (25 px at 60 m): rule is <=, so merge.
        let a = candidate_at((100.0, 100.0), 0, shape);
        let b = candidate_at((100.0, 125.0), 1, shape);
        assert_eq!(consolidate(&[a, b], &ConsolidationParams::default()).len(), 1);
        // A hair beyond: separate.
        let a = candidate_at((100.0, 100.0), 0, shape);
        let b = candidate_at((100.0, 125.02), 1, shape);
        assert_eq!(consolidate(&[a, b], &ConsolidationParams::default()).len(), 2);
    }

    #[test]
    fn component_filter_thresholds() {
        let mut mask = MaskGrid::empty(40, 40);
        for r in 0..7 {
            for c in 0..5 {
                mask.set(r, c, true); // 35 px
            }
        }
        for r in 20..26 {
            for c in 20..26 {
                mask.set(r, c, true); // 36 px
            }
        }
        let out = filter_components(&mask);
        assert!(!out.get(0, 0));
        assert!(out.get(20, 20));
        assert_eq!(filter_components(&MaskGrid::empty(8, 8)).count_true(), 0);
    }

    fn dummy_record(peak: f64, origin: (f64, f64)) -> PlumeRecord {
        PlumeRecord {
            id: 0,
            polygon_px: vec![],
            origin_px: origin,
            peak_enhancement_ppm_m: peak,
            mean_enhancement_ppm_m: peak / 2.0,
            area_px: 100,
            detection_fraction: 1.0,
            mask: MaskGrid::empty(4, 4),
            fit: None,
            rejection: None,
        }
    }

    #[test]
    fn final_filter_boundaries() {
        let outcome = final_filters(
            vec![dummy_record(49.9, (1.0, 1.0)), dummy_record(50.0, (1.0, 1.0))],
            None,
        );
        assert_eq!(outcome.kept.len(), 1);
        assert_eq!(outcome.kept[0].peak_enhancement_ppm_m, 50.0);
        assert_eq!(outcome.rejected.len(), 1);
        assert_eq!(
            outcome.rejected[0].rejection,
            Some(RejectionReason::Enhancement)
        );
        assert!(!outcome.water_filter_applied);

        let mut water = MaskGrid::empty(4, 4);
        water.set(1, 1, true);
        let outcome = final_filters(
            vec![dummy_record(80.0, (1.0, 1.0)), dummy_record(80.0, (3.0, 3.0))],
            Some(&water),
        );
        assert!(outcome.water_filter_applied);
        assert_eq!(outcome.kept.len(), 1);
        assert_eq!(outcome.rejected[0].rejection, Some(RejectionReason::Water));
    }

    #[test]
    fn snr_hand_cases() {
        // Background {0,1,2}: mean 1, sample std exactly 1.
        let snr_v = snr(&[9.0, 9.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((snr_v - 8.0).abs() < 1e-12);
        assert_eq!(snr(&[1.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        // Translation invariance.
        let shifted = snr(&[19.0, 19.0], &[10.0, 11.0, 12.0]).unwrap();
        assert!((shifted - 8.0).abs() < 1e-12);
        assert!(snr(&[1.0], &[5.0]).is_err());
        assert!(snr(&[1.0], &[5.0, 5.0]).is_err());
    }
}
