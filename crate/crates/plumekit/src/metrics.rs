//! Stratified detection, quantification and localization metrics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geom::Polygon;
use crate::grid::{Grid, MaskGrid};
use crate::hungarian::hungarian_assign;
use crate::loss::SlotPrediction;
use crate::retrieval::instance_masks;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric input is empty")]
    EmptyInput,
    #[error("inputs must have equal length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("bucket mean must be positive, got {0}")]
    BadBucketMean(f64),
    #[error("bucket edges must be strictly increasing")]
    BadEdges,
}

/// Minimum IoU (exclusive) for an instance match to count as a true
/// positive.
pub const IOU_THRESHOLD: f64 = 0.25;

/// Maximum origin distance (inclusive, meters) for an origin match.
pub const ORIGIN_DISTANCE_MAX_M: f64 = 600.0;

/// Stratification edges used throughout the evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSpec {
    /// Emission rate over wind speed, (kg/hr)/(m/s).
    pub erbws_edges: Vec<f64>,
    /// Pixel label enhancement, ppm-m.
    pub enh_edges: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            erbws_edges: vec![50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0],
            enh_edges: vec![
                0.0, 5.0, 25.0, 50.0, 125.0, 250.0, 500.0, 1000.0, 2500.0, 25_000.0,
            ],
        }
    }
}

impl BucketSpec {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for edges in [&self.erbws_edges, &self.enh_edges] {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MetricsError::BadEdges);
            }
        }
        Ok(())
    }
}

/// Half-open bucket assignment with labeled underflow/overflow ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bucket {
    Underflow,
    Range(usize),
    Overflow,
}

/// Assigns `value` to a half-open interval `[edge_i, edge_{i+1})`;
/// values below the first edge underflow, values at or above the last
/// edge overflow.
pub fn bucket_of(edges: &[f64], value: f64) -> Bucket {
    if value < edges[0] {
        return Bucket::Underflow;
    }
    if value >= edges[edges.len() - 1] {
        return Bucket::Overflow;
    }
    Bucket::Range(edges.partition_point(|&e| e <= value) - 1)
}

/// Human-readable label for a bucket under the given edges.
pub fn bucket_label(edges: &[f64], bucket: Bucket) -> String {
    match bucket {
        Bucket::Underflow => format!("<{}", edges[0]),
        Bucket::Range(i) => format!("[{},{})", edges[i], edges[i + 1]),
        Bucket::Overflow => format!(">={}", edges[edges.len() - 1]),
    }
}

/// Intersection over union of two masks.
pub fn iou(a: &MaskGrid, b: &MaskGrid) -> f64 {
    let mut inter = 0_usize;
    let mut union = 0_usize;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Instance matching outcome; indices refer to the input slices.
#[derive(Debug, Clone, Default)]
pub struct InstanceMatches {
    /// (pred index, gt index, IoU) for matches above the threshold.
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub missed: Vec<usize>,
}

/// Matches predicted to ground-truth masks by maximizing total IoU, then
/// keeps pairs whose IoU strictly exceeds 0.25.
pub fn match_instances(pred: &[MaskGrid], gt: &[MaskGrid]) -> InstanceMatches {
    if pred.is_empty() || gt.is_empty() {
        return InstanceMatches {
            tp: Vec::new(),
            fp: (0..pred.len()).collect(),
            missed: (0..gt.len()).collect(),
        };
    }
    let mut cost = Grid::zeros(pred.len(), gt.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            cost.set(i, j, -iou(p, g));
        }
    }
    let assignment = hungarian_assign(&cost).expect("IoU costs are finite");
    let mut matches = InstanceMatches::default();
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    for &(i, j) in &assignment.pairs {
        let overlap = -cost.get(i, j);
        if overlap > IOU_THRESHOLD {
            matches.tp.push((i, j, overlap));
            pred_used[i] = true;
            gt_used[j] = true;
        }
    }
    matches.fp = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    matches.missed = (0..gt.len()).filter(|&j| !gt_used[j]).collect();
    matches
}

/// Origin matching outcome with distances in the input units.
#[derive(Debug, Clone, Default)]
pub struct OriginMatches {
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub missed: Vec<usize>,
    pub mean_distance: f64,
}

/// Matches origins by minimum total Euclidean distance; pairs within
/// 600 m (inclusive) are true positives. Coordinates must be in meters.
pub fn match_origins(pred: &[(f64, f64)], gt: &[(f64, f64)]) -> OriginMatches {
    if pred.is_empty() || gt.is_empty() {
        return OriginMatches {
            fp: (0..pred.len()).collect(),
            missed: (0..gt.len()).collect(),
            ..Default::default()
        };
    }
    let mut cost = Grid::zeros(pred.len(), gt.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            cost.set(i, j, ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt());
        }
    }
    let assignment = hungarian_assign(&cost).expect("distances are finite");
    let mut out = OriginMatches::default();
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    for &(i, j) in &assignment.pairs {
        let d = cost.get(i, j);
        if d <= ORIGIN_DISTANCE_MAX_M {
            out.tp.push((i, j, d));
            pred_used[i] = true;
            gt_used[j] = true;
        }
    }
    out.fp = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    out.missed = (0..gt.len()).filter(|&j| !gt_used[j]).collect();
    out.mean_distance = if out.tp.is_empty() {
        0.0
    } else {
        out.tp.iter().map(|t| t.2).sum::<f64>() / out.tp.len() as f64
    };
    out
}

/// Symmetric mean absolute percentage error; `0/0` terms contribute 0.
pub fn smape(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            a: pred.len(),
            b: truth.len(),
        });
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let denom = p.abs() + t.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (p - t).abs() / denom
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Root-mean-square error divided by the bucket's mean label value.
pub fn normalized_rmse(pred: &[f64], truth: &[f64], bucket_mean: f64) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            a: pred.len(),
            b: truth.len(),
        });
    }
    if !(bucket_mean > 0.0) {
        return Err(MetricsError::BadBucketMean(bucket_mean));
    }
    let mse: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt() / bucket_mean)
}

/// One matched pair for integrated-enhancement comparison.
#[derive(Debug, Clone)]
pub struct IntegratedPair<'a> {
    pub pred_enh: &'a Grid<f64>,
    pub gt_enh: &'a Grid<f64>,
    pub pred_mask: &'a MaskGrid,
    pub gt_mask: &'a MaskGrid,
    pub gt_erbws: f64,
}

/// Integrates pred and truth enhancement over each pair's union mask and
/// reports the SMAPE of the integrals per ERBWS bucket.
pub fn integrated_enh_smape(
    pairs: &[IntegratedPair<'_>],
    erbws_edges: &[f64],
) -> BTreeMap<Bucket, f64> {
    let mut grouped: BTreeMap<Bucket, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for pair in pairs {
        let mut pred_total = 0.0;
        let mut gt_total = 0.0;
        for (r, c, in_pred) in pair.pred_mask.iter_indexed() {
            if in_pred || pair.gt_mask.get(r, c) {
                pred_total += pair.pred_enh.get(r, c);
                gt_total += pair.gt_enh.get(r, c);
            }
        }
        let bucket = bucket_of(erbws_edges, pair.gt_erbws);
        let entry = grouped.entry(bucket).or_default();
        entry.0.push(pred_total);
        entry.1.push(gt_total);
    }
    grouped
        .into_iter()
        .map(|(bucket, (p, t))| (bucket, smape(&p, &t).expect("non-empty group")))
        .collect()
}

/// One point of a precision-recall sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

/// Precision/recall over mask-probability thresholds, aggregated across
/// tiles. Precision with no predictions is reported as 1.
pub fn pr_sweep(
    tiles: &[(&SlotPrediction, &[MaskGrid])],
    thresholds: &[f64],
    min_area: usize,
) -> Vec<PrPoint> {
    thresholds
        .iter()
        .map(|&threshold| {
            let mut tp = 0;
            let mut fp = 0;
            let mut missed = 0;
            for (pred, gt) in tiles {
                let instances = instance_masks(pred, threshold, min_area);
                let m = match_instances(&instances, gt);
                tp += m.tp.len();
                fp += m.fp.len();
                missed += m.missed.len();
            }
            let precision = if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = if tp + missed == 0 {
                1.0
            } else {
                tp as f64 / (tp + missed) as f64
            };
            PrPoint {
                threshold,
                precision,
                recall,
                tp,
                fp,
                missed,
            }
        })
        .collect()
}

/// Default buffer for polygon capture comparisons, in degrees.
pub const CAPTURE_BUFFER_DEG: f64 = 0.01;

/// Fraction of `set_b` polygons intersecting any `set_a` polygon after
/// buffering the latter by `buffer` (same units as the coordinates).
/// An empty `set_b` captures vacuously (1.0).
pub fn capture_rate(set_a: &[Polygon], set_b: &[Polygon], buffer: f64) -> f64 {
    if set_b.is_empty() {
        return 1.0;
    }
    let captured = set_b
        .iter()
        .filter(|b| set_a.iter().any(|a| a.intersects_buffered(b, buffer)))
        .count();
    captured as f64 / set_b.len() as f64
}

// --- aggregated evaluation ----------------------------------------------

/// One labeled plume instance for evaluation.
#[derive(Debug, Clone)]
pub struct GtInstance {
    pub enh: Grid<f64>,
    pub mask: MaskGrid,
    pub origin_px: Option<(f64, f64)>,
    /// Emission rate over wind speed; `None` excludes the plume from
    /// ERBWS stratification.
    pub erbws: Option<f64>,
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub buckets: BucketSpec,
    pub plume_threshold: f64,
    pub origin_threshold: f64,
    pub min_component_px: usize,
    pub pixel_size_m: f64,
    pub pr_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            buckets: BucketSpec::default(),
            plume_threshold: crate::retrieval::DEFAULT_PLUME_THRESHOLD,
            origin_threshold: crate::retrieval::DEFAULT_ORIGIN_THRESHOLD,
            min_component_px: 36,
            pixel_size_m: 60.0,
            pr_thresholds: (1..20).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

/// Detection counts and rates for one stratum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionRow {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn detection_row(label: String, tp: usize, fp: usize, missed: usize) -> DetectionRow {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + missed == 0 {
        1.0
    } else {
        tp as f64 / (tp + missed) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionRow {
        label,
        tp,
        fp,
        missed,
        precision,
        recall,
        f1,
    }
}

/// Pixel-level error rates for one enhancement stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelRow {
    pub label: String,
    pub smape: f64,
    pub nrmse: f64,
    pub pixels: usize,
}

/// Stratified evaluation report.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub detection_overall: DetectionRow,
    pub detection_by_erbws: Vec<DetectionRow>,
    /// Pixel metrics on the slot-summed enhancement fields.
    pub pixel_by_enh: Vec<PixelRow>,
    pub integrated_smape_by_erbws: Vec<(String, f64)>,
    pub origin_tp: usize,
    pub origin_fp: usize,
    pub origin_missed: usize,
    pub mean_origin_distance_m: f64,
    pub pr_curve: Vec<PrPoint>,
}

/// Runs the full tile-level evaluation: instance matching stratified by
/// ERBWS, origin matching in meters, pixel metrics on the slot-summed
/// enhancements bucketed by label enhancement, integrated-enhancement
/// SMAPE, and a PR sweep.
pub fn evaluate(tiles: &[(&SlotPrediction, &[GtInstance])], cfg: &EvalConfig) -> EvalReport {
    let mut report = EvalReport::default();
    let mut bucket_counts: BTreeMap<Bucket, (usize, usize, usize)> = BTreeMap::new();
    let mut overall = (0_usize, 0_usize, 0_usize);
    let mut origin_distances = Vec::new();
    let mut pixel_groups: BTreeMap<Bucket, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut integrated_groups: BTreeMap<Bucket, (Vec<f64>, Vec<f64>)> = BTreeMap::new();

    for (pred, gts) in tiles {
        let instances = instance_masks(pred, cfg.plume_threshold, cfg.min_component_px);
        let gt_masks: Vec<MaskGrid> = gts.iter().map(|g| g.mask.clone()).collect();
        let matches = match_instances(&instances, &gt_masks);

        overall.0 += matches.tp.len();
        overall.1 += matches.fp.len();
        overall.2 += matches.missed.len();
        for &(_, j, _) in &matches.tp {
            if let Some(erbws) = gts[j].erbws {
                bucket_counts
                    .entry(bucket_of(&cfg.buckets.erbws_edges, erbws))
                    .or_default()
                    .0 += 1;
            }
        }
        for &j in &matches.missed {
            if let Some(erbws) = gts[j].erbws {
                bucket_counts
                    .entry(bucket_of(&cfg.buckets.erbws_edges, erbws))
                    .or_default()
                    .2 += 1;
            }
        }
        // False positives attribute to the bucket of the gt they overlap
        // most (if any).
        for &i in &matches.fp {
            let best = gts
                .iter()
                .enumerate()
                .map(|(j, g)| (j, iou(&instances[i], &g.mask)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            if let Some((j, overlap)) = best {
                if overlap > 0.0 {
                    if let Some(erbws) = gts[j].erbws {
                        bucket_counts
                            .entry(bucket_of(&cfg.buckets.erbws_edges, erbws))
                            .or_default()
                            .1 += 1;
                        continue;
                    }
                }
            }
            bucket_counts.entry(Bucket::Underflow).or_default().1 += 1;
        }

        // Origins in meters, via the pixel scale.
        let pred_origins: Vec<(f64, f64)> = instances
            .iter()
            .filter_map(|mask| {
                // Use the strongest slot's origin probabilities under the
                // instance footprint.
                let mut best: Option<(f64, f64)> = None;
                for slot in 0..pred.slots() {
                    if let Some(o) = crate::retrieval::origin_centroid_masked(
                        &pred.origin_prob[slot],
                        mask,
                        cfg.origin_threshold,
                    ) {
                        best = Some(o);
                        break;
                    }
                }
                best
            })
            .map(|(r, c)| (r * cfg.pixel_size_m, c * cfg.pixel_size_m))
            .collect();
        let gt_origins: Vec<(f64, f64)> = gts
            .iter()
            .filter_map(|g| g.origin_px)
            .map(|(r, c)| (r * cfg.pixel_size_m, c * cfg.pixel_size_m))
            .collect();
        let om = match_origins(&pred_origins, &gt_origins);
        report.origin_tp += om.tp.len();
        report.origin_fp += om.fp.len();
        report.origin_missed += om.missed.len();
        origin_distances.extend(om.tp.iter().map(|t| t.2));

        // Pixel metrics on the slot-summed fields.
        let pred_total = pred.total_enhancement();
        let (rows, cols) = pred_total.shape();
        let mut gt_total = Grid::zeros(rows, cols);
        for g in gts.iter() {
            for (dst, src) in gt_total.values_mut().iter_mut().zip(g.enh.values()) {
                *dst += *src;
            }
        }
        for (p, t) in pred_total.values().iter().zip(gt_total.values()) {
            let bucket = bucket_of(&cfg.buckets.enh_edges, *t);
            let entry = pixel_groups.entry(bucket).or_default();
            entry.0.push(*p);
            entry.1.push(*t);
        }

        // Integrated enhancement per matched pair over the union mask.
        for &(i, j, _) in &matches.tp {
            let Some(erbws) = gts[j].erbws else { continue };
            let mut pred_total_i = 0.0;
            let mut gt_total_j = 0.0;
            for (r, c, in_pred) in instances[i].iter_indexed() {
                if in_pred || gts[j].mask.get(r, c) {
                    pred_total_i += pred_total.get(r, c);
                    gt_total_j += gts[j].enh.get(r, c);
                }
            }
            let entry = integrated_groups
                .entry(bucket_of(&cfg.buckets.erbws_edges, erbws))
                .or_default();
            entry.0.push(pred_total_i);
            entry.1.push(gt_total_j);
        }
    }

    report.detection_overall = detection_row("overall".into(), overall.0, overall.1, overall.2);
    report.detection_by_erbws = bucket_counts
        .into_iter()
        .map(|(bucket, (tp, fp, missed))| {
            detection_row(
                bucket_label(&cfg.buckets.erbws_edges, bucket),
                tp,
                fp,
                missed,
            )
        })
        .collect();
    report.mean_origin_distance_m = if origin_distances.is_empty() {
        0.0
    } else {
        origin_distances.iter().sum::<f64>() / origin_distances.len() as f64
    };
    report.pixel_by_enh = pixel_groups
        .into_iter()
        .map(|(bucket, (p, t))| {
            let mean_t = t.iter().sum::<f64>() / t.len() as f64;
            let nrmse = if mean_t > 0.0 {
                normalized_rmse(&p, &t, mean_t).expect("non-empty")
            } else {
                0.0
            };
            PixelRow {
                label: bucket_label(&cfg.buckets.enh_edges, bucket),
                smape: smape(&p, &t).expect("non-empty"),
                nrmse,
                pixels: p.len(),
            }
        })
        .collect();
    report.integrated_smape_by_erbws = integrated_groups
        .into_iter()
        .map(|(bucket, (p, t))| {
            (
                bucket_label(&cfg.buckets.erbws_edges, bucket),
                smape(&p, &t).expect("non-empty"),
            )
        })
        .collect();

    let pr_tiles: Vec<(&SlotPrediction, Vec<MaskGrid>)> = tiles
        .iter()
        .map(|(pred, gts)| (*pred, gts.iter().map(|g| g.mask.clone()).collect()))
        .collect();
    let pr_refs: Vec<(&SlotPrediction, &[MaskGrid])> = pr_tiles
        .iter()
        .map(|(pred, masks)| (*pred, masks.as_slice()))
        .collect();
    report.pr_curve = pr_sweep(&pr_refs, &cfg.pr_thresholds, cfg.min_component_px);
    report
}

impl EvalReport {
    /// Long-format CSV: one row per (section, stratum, metric).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("section,stratum,metric,value\n");
        let mut push = |section: &str, stratum: &str, metric: &str, value: f64| {
            out.push_str(&format!("{section},{stratum},{metric},{value:.6}\n"));
        };
        for row in std::iter::once(&self.detection_overall).chain(&self.detection_by_erbws) {
            push("detection", &row.label, "precision", row.precision);
            push("detection", &row.label, "recall", row.recall);
            push("detection", &row.label, "f1", row.f1);
            push("detection", &row.label, "tp", row.tp as f64);
            push("detection", &row.label, "fp", row.fp as f64);
            push("detection", &row.label, "fn", row.missed as f64);
        }
        for row in &self.pixel_by_enh {
            push("pixel", &row.label, "smape", row.smape);
            push("pixel", &row.label, "nrmse", row.nrmse);
            push("pixel", &row.label, "pixels", row.pixels as f64);
        }
        for (label, v) in &self.integrated_smape_by_erbws {
            push("integrated", label, "smape", *v);
        }
        push("origin", "overall", "tp", self.origin_tp as f64);
        push("origin", "overall", "fp", self.origin_fp as f64);
        push("origin", "overall", "fn", self.origin_missed as f64);
        push(
            "origin",
            "overall",
            "mean_distance_m",
            self.mean_origin_distance_m,
        );
        for p in &self.pr_curve {
            let stratum = format!("t={:.2}", p.threshold);
            push("pr", &stratum, "precision", p.precision);
            push("pr", &stratum, "recall", p.recall);
        }
        out
    }

    /// Short human-readable summary.
    pub fn to_text_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "detection overall: precision {:.3} recall {:.3} f1 {:.3} (tp {} fp {} fn {})\n",
            self.detection_overall.precision,
            self.detection_overall.recall,
            self.detection_overall.f1,
            self.detection_overall.tp,
            self.detection_overall.fp,
            self.detection_overall.missed,
        ));
        for row in &self.detection_by_erbws {
            out.push_str(&format!(
                "  erbws {}: precision {:.3} recall {:.3} f1 {:.3} (tp {} fp {} fn {})\n",
                row.label, row.precision, row.recall, row.f1, row.tp, row.fp, row.missed
            ));
        }
        out.push_str(&format!(
            "origins: tp {} fp {} fn {}, mean distance {:.1} m\n",
            self.origin_tp, self.origin_fp, self.origin_missed, self.mean_origin_distance_m
        ));
        for row in &self.pixel_by_enh {
            out.push_str(&format!(
                "  pixel enh {}: smape {:.3} nrmse {:.3} ({} px)\n",
                row.label, row.smape, row.nrmse, row.pixels
            ));
        }
        for (label, v) in &self.integrated_smape_by_erbws {
            out.push_str(&format!("  integrated erbws {}: smape {:.3}\n", label, v));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rect_mask(rows: usize, cols: usize, r0: usize, c0: usize, h: usize, w: usize) -> MaskGrid {
        MaskGrid::from_fn(rows, cols, |r, c| {
            r >= r0 && r < r0 + h && c >= c0 && c < c0 + w
        })
    }

    #[test]
    fn bucket_assignment() {
        let edges = [50.0, 100.0, 200.0];
        assert_eq!(bucket_of(&edges, 10.0), Bucket::Underflow);
        assert_eq!(bucket_of(&edges, 50.0), Bucket::Range(0));
        assert_eq!(bucket_of(&edges, 99.999), Bucket::Range(0));
        assert_eq!(bucket_of(&edges, 100.0), Bucket::Range(1));
        assert_eq!(bucket_of(&edges, 150.0), Bucket::Range(1));
        assert_eq!(bucket_of(&edges, 200.0), Bucket::Overflow);
        assert_eq!(bucket_label(&edges, Bucket::Range(1)), "[100,200)");
    }

    #[test]
    fn instance_matching_boundaries() {
        // Identical masks: one TP at IoU 1.
        let a = rect_mask(16, 16, 2, 2, 5, 8);
        let m = match_instances(&[a.clone()], &[a.clone()]);
        assert_eq!(m.tp.len(), 1);
        assert_eq!(m.tp[0].2, 1.0);

        // Disjoint masks: FP + FN.
        let b = rect_mask(16, 16, 10, 10, 3, 3);
        let m = match_instances(&[a.clone()], &[b]);
        assert!(m.tp.is_empty());
        assert_eq!(m.fp, vec![0]);
        assert_eq!(m.missed, vec![0]);

        // IoU exactly 0.25 fails the strict threshold: two 40 px masks
        // overlapping in 16 px (union 64).
        let p = rect_mask(16, 16, 0, 0, 5, 8);
        let g = rect_mask(16, 16, 3, 0, 5, 8);
        assert_relative_eq!(iou(&p, &g), 0.25, epsilon = 1e-12);
        let m = match_instances(&[p.clone()], &[g.clone()]);
        assert!(m.tp.is_empty());

        // One more row of overlap clears the threshold.
        let g2 = rect_mask(16, 16, 2, 0, 5, 8);
        assert!(iou(&p, &g2) > 0.25);
        let m = match_instances(&[p], &[g2]);
        assert_eq!(m.tp.len(), 1);
    }

    #[test]
    fn origin_matching_rules() {
        let m = match_origins(&[(0.0, 0.0)], &[(0.0, 0.0)]);
        assert_eq!(m.tp.len(), 1);
        assert_eq!(m.tp[0].2, 0.0);

        // Exactly 600 m away is inside; 601 m is out.
        let m = match_origins(&[(0.0, 600.0)], &[(0.0, 0.0)]);
        assert_eq!(m.tp.len(), 1);
        let m = match_origins(&[(0.0, 601.0)], &[(0.0, 0.0)]);
        assert!(m.tp.is_empty());
        assert_eq!(m.fp.len(), 1);
        assert_eq!(m.missed.len(), 1);

        // Three-on-three hand case against the exhaustive optimum.
        let pred = [(0.0, 0.0), (0.0, 500.0), (0.0, 1000.0)];
        let gt = [(0.0, 480.0), (0.0, 1020.0), (0.0, 20.0)];
        let m = match_origins(&pred, &gt);
        assert_eq!(m.tp.len(), 3);
        let total: f64 = m.tp.iter().map(|t| t.2).sum();
        assert_relative_eq!(total, 60.0, epsilon = 1e-9);
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_relative_eq!(smape(&[1.0], &[3.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!(smape(&[], &[]).is_err());
        // Symmetry.
        let a = [1.0, 5.0, 0.3];
        let b = [2.0, 4.0, 0.0];
        assert_eq!(smape(&a, &b).unwrap(), smape(&b, &a).unwrap());
    }

    #[test]
    fn normalized_rmse_examples() {
        assert_eq!(normalized_rmse(&[5.0, 6.0], &[5.0, 6.0], 5.5).unwrap(), 0.0);
        // Constant error e over bucket mean m.
        let v = normalized_rmse(&[11.0, 21.0], &[10.0, 20.0], 15.0).unwrap();
        assert_relative_eq!(v, 1.0 / 15.0, epsilon = 1e-12);
        assert!(normalized_rmse(&[1.0], &[1.0], 0.0).is_err());
        // Random case against the direct formula.
        let p = [1.2, 3.4, 0.1];
        let t = [1.0, 3.0, 0.4];
        let mse: f64 = p
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 3.0;
        assert_eq!(
            normalized_rmse(&p, &t, 2.0).unwrap(),
            mse.sqrt() / 2.0
        );
    }

    #[test]
    fn integrated_smape_doubling_case() {
        let enh = Grid::filled(8, 8, 10.0);
        let doubled = Grid::filled(8, 8, 20.0);
        let mask = rect_mask(8, 8, 2, 2, 4, 4);
        let pairs = [IntegratedPair {
            pred_enh: &doubled,
            gt_enh: &enh,
            pred_mask: &mask,
            gt_mask: &mask,
            gt_erbws: 150.0,
        }];
        let edges = BucketSpec::default().erbws_edges;
        let by_bucket = integrated_enh_smape(&pairs, &edges);
        let v = by_bucket[&bucket_of(&edges, 150.0)];
        // SMAPE(2I, I) = 2/3; ERBWS 150 lands in [100, 200).
        assert_relative_eq!(v, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(bucket_label(&edges, bucket_of(&edges, 150.0)), "[100,200)");
    }

    #[test]
    fn capture_rate_examples() {
        let sq = |x0: f64| {
            Polygon::new(vec![(x0, 0.0), (x0 + 1.0, 0.0), (x0 + 1.0, 1.0), (x0, 1.0)])
        };
        let a = vec![sq(0.0)];
        let b = vec![sq(0.0)];
        assert_eq!(capture_rate(&a, &b, CAPTURE_BUFFER_DEG), 1.0);

        // Disjoint beyond the buffer.
        let far = vec![sq(5.0)];
        assert_eq!(capture_rate(&a, &far, CAPTURE_BUFFER_DEG), 0.0);

        // 1.0 km apart with a 1.1 km buffer: captured. (Coordinates in
        // km here; buffer argument matches the units.)
        let near = vec![sq(2.0)]; // gap of 1.0 between x=1 and x=2
        assert_eq!(capture_rate(&a, &near, 1.1), 1.0);
        assert_eq!(capture_rate(&a, &near, 0.9), 0.0);
    }

    #[test]
    fn pr_sweep_monotone_recall() {
        // One synthetic tile: probability ramp over a square plume.
        let mut mask_prob = Grid::zeros(64, 64);
        for r in 10..30 {
            for c in 10..30 {
                mask_prob.set(r, c, 0.8);
            }
        }
        let pred = SlotPrediction::new(
            vec![Grid::filled(64, 64, 100.0)],
            vec![mask_prob],
            vec![Grid::zeros(64, 64)],
        )
        .unwrap();
        let gt = vec![rect_mask(64, 64, 10, 10, 20, 20)];
        let tiles = [(&pred, gt.as_slice())];
        let points = pr_sweep(&tiles, &[0.1, 0.5, 0.9], 36);
        assert_eq!(points[0].recall, 1.0);
        assert_eq!(points[1].recall, 1.0);
        assert_eq!(points[2].recall, 0.0); // threshold above all probs
        let mut prev = f64::INFINITY;
        for p in &points {
            assert!(p.recall <= prev);
            prev = p.recall;
        }
        // Perfect predictor at interior thresholds.
        assert_eq!(points[1].precision, 1.0);
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let (rows, cols) = (64, 64);
        let gt_mask = rect_mask(rows, cols, 8, 8, 20, 24);
        let enh = gt_mask.map(|b| if b { 300.0 } else { 0.0 });
        let gt = vec![GtInstance {
            enh: enh.clone(),
            mask: gt_mask.clone(),
            origin_px: Some((15.0, 15.0)),
            erbws: Some(900.0),
        }];
        // Origin disc sits fully inside the mask so the masked centroid
        // is exact.
        let origin_prob = crate::loss::origin_disc(rows, cols, (15.0, 15.0), 3.0)
            .map(|b| if b { 1.0 } else { 0.0 });
        let pred = SlotPrediction::new(
            vec![enh.clone()],
            vec![gt_mask.map(|b| if b { 1.0 } else { 0.0 })],
            vec![origin_prob],
        )
        .unwrap();
        let tiles = [(&pred, gt.as_slice())];
        let report = evaluate(&tiles, &EvalConfig::default());
        assert_eq!(report.detection_overall.tp, 1);
        assert_eq!(report.detection_overall.f1, 1.0);
        assert_eq!(report.origin_tp, 1);
        assert!(report.mean_origin_distance_m < 1e-9);
        // All pixel buckets show zero error.
        for row in &report.pixel_by_enh {
            assert_eq!(row.smape, 0.0, "bucket {}", row.label);
        }
        let row = report
            .detection_by_erbws
            .iter()
            .find(|r| r.label == "[800,1600)")
            .expect("bucket present");
        assert_eq!(row.recall, 1.0);
    }
}
