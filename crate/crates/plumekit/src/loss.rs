//! Slot assignment and training-objective arithmetic.
//!
//! Predictions carry P parallel slots (enhancement, mask probability,
//! origin probability). Ground-truth plumes are matched to slots by
//! minimum-cost assignment; unmatched slots pair with an all-empty
//! target. Enhancement terms run on square-rooted values under a Huber
//! loss, mask and origin terms under binary cross-entropy.

use thiserror::Error;

use crate::grid::{Grid, MaskGrid};
use crate::hungarian::{hungarian_assign, HungarianError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("huber delta must be positive, got {0}")]
    BadDelta(f64),
    #[error("ground truth has {gt} plumes but prediction has only {slots} slots")]
    TooManyPlumes { gt: usize, slots: usize },
    #[error("prediction grids must share one shape")]
    ShapeMismatch,
    #[error(transparent)]
    Hungarian(#[from] HungarianError),
}

/// Probability clip applied inside [`bce`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Radius (pixels) of the binary disc stamped around each origin.
pub const ORIGIN_DISC_RADIUS_PX: f64 = 15.0;

/// Huber loss of a residual: quadratic within `delta`, linear outside.
pub fn huber(residual: f64, delta: f64) -> Result<f64, LossError> {
    if !(delta > 0.0) {
        return Err(LossError::BadDelta(delta));
    }
    Ok(huber_unchecked(residual, delta))
}

#[inline]
fn huber_unchecked(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Binary cross-entropy with the probability clipped to
/// `[BCE_EPSILON, 1 - BCE_EPSILON]`.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// P parallel per-pixel outputs for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPrediction {
    pub enh: Vec<Grid<f64>>,
    pub mask_prob: Vec<Grid<f64>>,
    pub origin_prob: Vec<Grid<f64>>,
}

impl SlotPrediction {
    pub fn new(
        enh: Vec<Grid<f64>>,
        mask_prob: Vec<Grid<f64>>,
        origin_prob: Vec<Grid<f64>>,
    ) -> Result<Self, LossError> {
        let p = enh.len();
        if mask_prob.len() != p || origin_prob.len() != p || p == 0 {
            return Err(LossError::ShapeMismatch);
        }
        let shape = enh[0].shape();
        for g in enh.iter().chain(&mask_prob).chain(&origin_prob) {
            if g.shape() != shape {
                return Err(LossError::ShapeMismatch);
            }
        }
        Ok(Self {
            enh,
            mask_prob,
            origin_prob,
        })
    }

    /// All-zero prediction with `slots` slots.
    pub fn empty(slots: usize, rows: usize, cols: usize) -> Self {
        Self {
            enh: vec![Grid::zeros(rows, cols); slots],
            mask_prob: vec![Grid::zeros(rows, cols); slots],
            origin_prob: vec![Grid::zeros(rows, cols); slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.enh.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.enh[0].shape()
    }

    /// Per-pixel sum of slot enhancements.
    pub fn total_enhancement(&self) -> Grid<f64> {
        let (rows, cols) = self.shape();
        let mut total = Grid::zeros(rows, cols);
        for g in &self.enh {
            for (dst, src) in total.values_mut().iter_mut().zip(g.values()) {
                *dst += *src;
            }
        }
        total
    }
}

/// One labeled plume: enhancement (ppm-m), footprint mask and the origin
/// disc.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPlume {
    pub enh: Grid<f64>,
    pub mask: MaskGrid,
    pub origin_disc: MaskGrid,
}

impl GroundTruthPlume {
    /// Builds the label triple from an enhancement grid, its mask and an
    /// optional origin (absent origins get an empty disc).
    pub fn new(enh: Grid<f64>, mask: MaskGrid, origin_px: Option<(f64, f64)>) -> Self {
        let (rows, cols) = enh.shape();
        let origin_disc = match origin_px {
            Some(center) => origin_disc(rows, cols, center, ORIGIN_DISC_RADIUS_PX),
            None => MaskGrid::empty(rows, cols),
        };
        Self {
            enh,
            mask,
            origin_disc,
        }
    }
}

/// Binary circle of the given radius around `center` (row, col).
pub fn origin_disc(rows: usize, cols: usize, center: (f64, f64), radius_px: f64) -> MaskGrid {
    let r2 = radius_px * radius_px;
    MaskGrid::from_fn(rows, cols, |r, c| {
        let dr = r as f64 - center.0;
        let dc = c as f64 - center.1;
        dr * dr + dc * dc <= r2
    })
}

/// Loss weights; defaults follow the trained-model settings with the
/// slot/total combination weights left at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_slot: f64,
    pub lambda_total: f64,
    pub lambda_enh: f64,
    pub lambda_mask: f64,
    pub lambda_origin: f64,
    pub lambda_e_total: f64,
    pub lambda_m_total: f64,
    pub lambda_o_total: f64,
    pub enh_plume_upweight: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_slot: 1.0,
            lambda_total: 1.0,
            lambda_enh: 2.6,
            lambda_mask: 1.0,
            lambda_origin: 24.0,
            lambda_e_total: 6.0,
            lambda_m_total: 1.0,
            lambda_o_total: 19.0,
            enh_plume_upweight: 30.0,
            huber_delta: 1.0,
        }
    }
}

// Weighted pixel mean of the Huber loss on sqrt-space residuals; plume
// pixels (by gt mask) carry the upweight.
fn enh_term(pred: &Grid<f64>, gt: &Grid<f64>, gt_mask: &MaskGrid, w: &LossWeights) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&p, &t), &m) in pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(gt_mask.values())
    {
        let weight = if m { w.enh_plume_upweight } else { 1.0 };
        let residual = p.max(0.0).sqrt() - t.max(0.0).sqrt();
        num += weight * huber_unchecked(residual, w.huber_delta);
        den += weight;
    }
    num / den
}

// Plain pixel mean of BCE against a binary target grid.
fn bce_term(prob: &Grid<f64>, target: &MaskGrid) -> f64 {
    let mut total = 0.0;
    for (&p, &t) in prob.values().iter().zip(target.values()) {
        total += bce(p, if t { 1.0 } else { 0.0 });
    }
    total / prob.values().len() as f64
}

fn pair_cost(
    pred: &SlotPrediction,
    slot: usize,
    gt: Option<&GroundTruthPlume>,
    empty: &GroundTruthPlume,
    w: &LossWeights,
) -> f64 {
    let gt = gt.unwrap_or(empty);
    w.lambda_enh * enh_term(&pred.enh[slot], &gt.enh, &gt.mask, w)
        + w.lambda_mask * bce_term(&pred.mask_prob[slot], &gt.mask)
        + w.lambda_origin * bce_term(&pred.origin_prob[slot], &gt.origin_disc)
}

/// Minimum paired loss over slot-to-plume assignments. Returns the loss
/// and, per slot, the matched ground-truth index (`None` for slots
/// paired with the empty target).
pub fn slot_loss(
    pred: &SlotPrediction,
    gt: &[GroundTruthPlume],
    w: &LossWeights,
) -> Result<(f64, Vec<Option<usize>>), LossError> {
    if !(w.huber_delta > 0.0) {
        return Err(LossError::BadDelta(w.huber_delta));
    }
    let p = pred.slots();
    if gt.len() > p {
        return Err(LossError::TooManyPlumes {
            gt: gt.len(),
            slots: p,
        });
    }
    let (rows, cols) = pred.shape();
    if gt.iter().any(|g| g.enh.shape() != (rows, cols)) {
        return Err(LossError::ShapeMismatch);
    }
    let empty = GroundTruthPlume {
        enh: Grid::zeros(rows, cols),
        mask: MaskGrid::empty(rows, cols),
        origin_disc: MaskGrid::empty(rows, cols),
    };

    // Columns beyond the real plumes all hold the identical empty
    // target, padding the cost matrix to P x P.
    let mut cost = Grid::zeros(p, p);
    for i in 0..p {
        let empty_cost = pair_cost(pred, i, None, &empty, w);
        for j in 0..p {
            let v = if j < gt.len() {
                pair_cost(pred, i, Some(&gt[j]), &empty, w)
            } else {
                empty_cost
            };
            cost.set(i, j, v);
        }
    }
    let assignment = hungarian_assign(&cost)?;
    let mut matched = vec![None; p];
    let mut total = 0.0;
    for &(slot, j) in &assignment.pairs {
        total += cost.get(slot, j);
        if j < gt.len() {
            matched[slot] = Some(j);
        }
    }
    Ok((total, matched))
}

/// Aggregate constraint terms: Huber on sqrt of summed enhancements plus
/// BCE on the per-pixel max of masks and origin discs.
pub fn total_loss(
    pred: &SlotPrediction,
    gt: &[GroundTruthPlume],
    w: &LossWeights,
) -> Result<f64, LossError> {
    if !(w.huber_delta > 0.0) {
        return Err(LossError::BadDelta(w.huber_delta));
    }
    let (rows, cols) = pred.shape();
    if gt.iter().any(|g| g.enh.shape() != (rows, cols)) {
        return Err(LossError::ShapeMismatch);
    }
    let pred_sum = pred.total_enhancement();
    let mut gt_sum = Grid::zeros(rows, cols);
    let mut gt_mask_union = MaskGrid::empty(rows, cols);
    let mut gt_disc_union = MaskGrid::empty(rows, cols);
    for g in gt {
        for (dst, src) in gt_sum.values_mut().iter_mut().zip(g.enh.values()) {
            *dst += *src;
        }
        for (dst, &src) in gt_mask_union.values_mut().iter_mut().zip(g.mask.values()) {
            *dst = *dst || src;
        }
        for (dst, &src) in gt_disc_union
            .values_mut()
            .iter_mut()
            .zip(g.origin_disc.values())
        {
            *dst = *dst || src;
        }
    }

    let max_over = |grids: &[Grid<f64>]| -> Grid<f64> {
        let mut out = Grid::zeros(rows, cols);
        for g in grids {
            for (dst, &src) in out.values_mut().iter_mut().zip(g.values()) {
                *dst = dst.max(src);
            }
        }
        out
    };
    let mask_max = max_over(&pred.mask_prob);
    let origin_max = max_over(&pred.origin_prob);

    Ok(w.lambda_e_total * enh_term(&pred_sum, &gt_sum, &gt_mask_union, w)
        + w.lambda_m_total * bce_term(&mask_max, &gt_mask_union)
        + w.lambda_o_total * bce_term(&origin_max, &gt_disc_union))
}

/// Weighted sum of the slot and total objectives.
pub fn final_loss(
    pred: &SlotPrediction,
    gt: &[GroundTruthPlume],
    w: &LossWeights,
) -> Result<f64, LossError> {
    let (slot, _) = slot_loss(pred, gt, w)?;
    let total = total_loss(pred, gt, w)?;
    Ok(w.lambda_slot * slot + w.lambda_total * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn huber_examples() {
        assert_relative_eq!(huber(0.5, 1.0).unwrap(), 0.125, epsilon = 1e-15);
        assert_relative_eq!(huber(2.0, 1.0).unwrap(), 1.5, epsilon = 1e-15);
        // Continuity at the knee from both branches.
        let delta = 0.7;
        let inside = 0.5 * delta * delta;
        let outside = delta * (delta - 0.5 * delta);
        assert_relative_eq!(inside, outside, epsilon = 1e-15);
        assert_relative_eq!(huber(delta, delta).unwrap(), inside, epsilon = 1e-15);
        assert!(huber(1.0, 0.0).is_err());
        assert!(huber(1.0, -1.0).is_err());
    }

    #[test]
    fn bce_examples() {
        assert_relative_eq!(bce(0.5, 0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(bce(0.5, 1.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(bce(1.0, 1.0) < 1e-6);
        assert!(bce(0.0, 0.0) < 1e-6);
        assert_relative_eq!(bce(0.9, 1.0), -(0.9_f64.ln()), epsilon = 1e-12);
    }

    fn single_pixel_case() -> (SlotPrediction, Vec<GroundTruthPlume>) {
        let pred = SlotPrediction::new(
            vec![Grid::filled(1, 1, 4.0)],
            vec![Grid::filled(1, 1, 0.8)],
            vec![Grid::filled(1, 1, 0.3)],
        )
        .unwrap();
        let gt = vec![GroundTruthPlume {
            enh: Grid::filled(1, 1, 9.0),
            mask: MaskGrid::filled(1, 1, true),
            origin_disc: MaskGrid::empty(1, 1),
        }];
        (pred, gt)
    }

    #[test]
    fn single_pixel_hand_arithmetic() {
        let (pred, gt) = single_pixel_case();
        let w = LossWeights::default();
        // Hand-computed: residual sqrt(4)-sqrt(9) = -1 inside delta=1,
        // huber = 0.5; mask bce = -ln 0.8; origin bce = -ln 0.7.
        let expected_slot = 2.6 * 0.5 + 1.0 * -(0.8_f64.ln()) + 24.0 * -(0.7_f64.ln());
        let (slot, matched) = slot_loss(&pred, &gt, &w).unwrap();
        assert_relative_eq!(slot, expected_slot, epsilon = 1e-9);
        assert_eq!(matched, vec![Some(0)]);

        let expected_total = 6.0 * 0.5 + 1.0 * -(0.8_f64.ln()) + 19.0 * -(0.7_f64.ln());
        let total = total_loss(&pred, &gt, &w).unwrap();
        assert_relative_eq!(total, expected_total, epsilon = 1e-9);

        let fin = final_loss(&pred, &gt, &w).unwrap();
        assert_relative_eq!(fin, expected_slot + expected_total, epsilon = 1e-9);
    }

    #[test]
    fn lambda_zeroing_isolates_components() {
        let (pred, gt) = single_pixel_case();
        let mut w = LossWeights::default();
        w.lambda_total = 0.0;
        let (slot, _) = slot_loss(&pred, &gt, &w).unwrap();
        assert_relative_eq!(
            final_loss(&pred, &gt, &w).unwrap(),
            w.lambda_slot * slot,
            epsilon = 1e-12
        );
        let mut w = LossWeights::default();
        w.lambda_slot = 0.0;
        assert_relative_eq!(
            final_loss(&pred, &gt, &w).unwrap(),
            w.lambda_total * total_loss(&pred, &gt, &w).unwrap(),
            epsilon = 1e-12
        );
    }

    fn random_scene(
        rng: &mut impl Rng,
        slots: usize,
        plumes: usize,
        n: usize,
    ) -> (SlotPrediction, Vec<GroundTruthPlume>) {
        let rand_grid =
            |rng: &mut dyn rand::RngCore, hi: f64| Grid::from_fn(n, n, |_, _| rng.gen::<f64>() * hi);
        let pred = SlotPrediction::new(
            (0..slots).map(|_| rand_grid(rng, 50.0)).collect(),
            (0..slots).map(|_| rand_grid(rng, 1.0)).collect(),
            (0..slots).map(|_| rand_grid(rng, 1.0)).collect(),
        )
        .unwrap();
        let gt = (0..plumes)
            .map(|_| {
                let enh = rand_grid(rng, 50.0);
                let mask = enh.map(|v| v > 25.0);
                GroundTruthPlume::new(
                    enh,
                    mask,
                    Some((rng.gen::<f64>() * n as f64, rng.gen::<f64>() * n as f64)),
                )
            })
            .collect();
        (pred, gt)
    }

    #[test]
    fn slot_permutation_invariance() {
        let mut rng = crate::rng::stream(31, "loss-perm", 0);
        let w = LossWeights::default();
        for case in 0..30 {
            let slots = rng.gen_range(2..=5);
            let plumes = rng.gen_range(1..=slots);
            let (pred, gt) = random_scene(&mut rng, slots, plumes, 6);
            let (base_slot, _) = slot_loss(&pred, &gt, &w).unwrap();
            let base_total = total_loss(&pred, &gt, &w).unwrap();
            let base_final = final_loss(&pred, &gt, &w).unwrap();

            // Rotate the slot order.
            let rot = |v: &[Grid<f64>]| -> Vec<Grid<f64>> {
                let mut out = v.to_vec();
                out.rotate_left(1);
                out
            };
            let permuted = SlotPrediction::new(
                rot(&pred.enh),
                rot(&pred.mask_prob),
                rot(&pred.origin_prob),
            )
            .unwrap();
            let (p_slot, _) = slot_loss(&permuted, &gt, &w).unwrap();
            let p_total = total_loss(&permuted, &gt, &w).unwrap();
            let p_final = final_loss(&permuted, &gt, &w).unwrap();
            assert_relative_eq!(base_slot, p_slot, max_relative = 1e-9);
            assert_relative_eq!(base_total, p_total, max_relative = 1e-9);
            assert_relative_eq!(base_final, p_final, max_relative = 1e-9);
            let _ = case;
        }
    }

    #[test]
    fn perfect_prediction_is_epsilon_bounded() {
        let n = 8;
        let mut gt_plumes = Vec::new();
        for k in 0..2 {
            let enh = Grid::from_fn(n, n, |r, c| {
                if r / 4 == k {
                    (r * n + c) as f64
                } else {
                    0.0
                }
            });
            let mask = enh.map(|v| v > 0.0);
            gt_plumes.push(GroundTruthPlume::new(enh, mask, Some((2.0, 2.0 + k as f64))));
        }
        // Prediction mirrors gt in slots 0..2, slot 2 empty.
        let pred = SlotPrediction::new(
            vec![
                gt_plumes[0].enh.clone(),
                gt_plumes[1].enh.clone(),
                Grid::zeros(n, n),
            ],
            vec![
                gt_plumes[0].mask.map(|b| if b { 1.0 } else { 0.0 }),
                gt_plumes[1].mask.map(|b| if b { 1.0 } else { 0.0 }),
                Grid::zeros(n, n),
            ],
            vec![
                gt_plumes[0].origin_disc.map(|b| if b { 1.0 } else { 0.0 }),
                gt_plumes[1].origin_disc.map(|b| if b { 1.0 } else { 0.0 }),
                Grid::zeros(n, n),
            ],
        )
        .unwrap();
        let w = LossWeights::default();
        let (slot, matched) = slot_loss(&pred, &gt_plumes, &w).unwrap();
        assert!(slot < 1e-5, "slot loss {slot}");
        assert_eq!(matched[0], Some(0));
        assert_eq!(matched[1], Some(1));
        assert_eq!(matched[2], None);
        assert!(total_loss(&pred, &gt_plumes, &w).unwrap() < 1e-5);
        assert!(final_loss(&pred, &gt_plumes, &w).unwrap() < 1e-5);
    }

    #[test]
    fn sqrt_transform_scales_residuals_linearly() {
        // Scaling enhancements by k^2 scales the sqrt-space residual by
        // k, hence the quadratic-regime huber term by k^2.
        let w = LossWeights {
            lambda_mask: 0.0,
            lambda_origin: 0.0,
            lambda_enh: 1.0,
            huber_delta: 100.0, // stay in the quadratic regime
            ..LossWeights::default()
        };
        let base = single_pixel_pair(4.0, 9.0);
        let scaled = single_pixel_pair(4.0 * 4.0, 9.0 * 4.0); // k = 2
        let (l1, _) = slot_loss(&base.0, &base.1, &w).unwrap();
        let (l2, _) = slot_loss(&scaled.0, &scaled.1, &w).unwrap();
        assert_relative_eq!(l2, 4.0 * l1, max_relative = 1e-9);
    }

    fn single_pixel_pair(pred_e: f64, gt_e: f64) -> (SlotPrediction, Vec<GroundTruthPlume>) {
        (
            SlotPrediction::new(
                vec![Grid::filled(1, 1, pred_e)],
                vec![Grid::filled(1, 1, 1.0)],
                vec![Grid::filled(1, 1, 0.0)],
            )
            .unwrap(),
            vec![GroundTruthPlume {
                enh: Grid::filled(1, 1, gt_e),
                mask: MaskGrid::filled(1, 1, true),
                origin_disc: MaskGrid::empty(1, 1),
            }],
        )
    }

    #[test]
    fn too_many_plumes_is_rejected() {
        let pred = SlotPrediction::empty(1, 2, 2);
        let gt = vec![
            GroundTruthPlume::new(Grid::zeros(2, 2), MaskGrid::empty(2, 2), None),
            GroundTruthPlume::new(Grid::zeros(2, 2), MaskGrid::empty(2, 2), None),
        ];
        assert!(matches!(
            slot_loss(&pred, &gt, &LossWeights::default()),
            Err(LossError::TooManyPlumes { gt: 2, slots: 1 })
        ));
    }

    #[test]
    fn origin_disc_radius() {
        let disc = origin_disc(40, 40, (20.0, 20.0), ORIGIN_DISC_RADIUS_PX);
        assert!(disc.get(20, 20));
        assert!(disc.get(20, 35)); // distance 15, inclusive
        assert!(!disc.get(20, 36));
        assert!(!disc.get(9, 9)); // diagonal distance 11 sqrt(2) > 15
    }
}
