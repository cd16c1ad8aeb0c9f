//! Externally produced prediction sets: one single-band raster per slot
//! per head plus a JSON manifest naming them. Stands in for the trained
//! model's outputs.

use std::path::{Path, PathBuf};

use serde_json::json;

use super::{raster, FormatError};
use crate::grid::Grid;
use crate::loss::SlotPrediction;

/// Prediction heads stored per slot.
pub const HEADS: [&str; 3] = ["enhancement", "mask", "origin"];

/// Fraction of NaN pixels above which a raster is rejected.
pub const MAX_NAN_DENSITY: f64 = 0.001;

/// Parsed manifest naming the per-slot raster files.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub tile_id: String,
    pub rows: usize,
    pub cols: usize,
    pub slots: usize,
    /// File names per head, indexed like [`HEADS`].
    pub files: [Vec<String>; 3],
}

/// Parses and validates a manifest document.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest, FormatError> {
    let doc: serde_json::Value = serde_json::from_slice(bytes)?;
    let bad = |reason: &str| FormatError::BadManifest {
        reason: reason.to_string(),
    };
    let tile_id = doc["tile_id"]
        .as_str()
        .ok_or_else(|| bad("missing tile_id"))?
        .to_string();
    let rows = doc["rows"].as_u64().ok_or_else(|| bad("missing rows"))? as usize;
    let cols = doc["cols"].as_u64().ok_or_else(|| bad("missing cols"))? as usize;
    let slots = doc["slots"].as_u64().ok_or_else(|| bad("missing slots"))? as usize;
    if rows == 0 || cols == 0 || rows * cols > (1 << 26) {
        return Err(bad("unreasonable tile shape"));
    }
    if slots == 0 || slots > 64 {
        return Err(bad("unreasonable slot count"));
    }
    let heads = doc["heads"]
        .as_object()
        .ok_or_else(|| bad("missing heads object"))?;
    let mut files: [Vec<String>; 3] = Default::default();
    for (i, head) in HEADS.iter().enumerate() {
        let list = heads
            .get(*head)
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad(&format!("missing head {head}")))?;
        if list.len() != slots {
            return Err(bad(&format!(
                "head {head} lists {} files for {slots} slots",
                list.len()
            )));
        }
        for (slot, item) in list.iter().enumerate() {
            let name = item.as_str().ok_or_else(|| bad("file name must be a string"))?;
            if name.is_empty() || name.contains("..") || name.starts_with('/') {
                return Err(FormatError::MissingSlotFile {
                    head: head.to_string(),
                    slot,
                });
            }
            files[i].push(name.to_string());
        }
    }
    Ok(Manifest {
        tile_id,
        rows,
        cols,
        slots,
        files,
    })
}

/// Load statistics: values clipped into range and NaNs replaced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub clipped: usize,
    pub nans: usize,
}

/// Writes the prediction set: rasters per slot per head and the
/// manifest. Returns the manifest path.
pub fn save_external(
    pred: &SlotPrediction,
    dir: &Path,
    tile_id: &str,
) -> Result<PathBuf, FormatError> {
    std::fs::create_dir_all(dir)?;
    let (rows, cols) = pred.shape();
    let mut file_lists: [Vec<String>; 3] = Default::default();
    for slot in 0..pred.slots() {
        for (h, head) in HEADS.iter().enumerate() {
            let grid = match h {
                0 => &pred.enh[slot],
                1 => &pred.mask_prob[slot],
                _ => &pred.origin_prob[slot],
            };
            let name = format!("{tile_id}_{head}_{slot:02}.pkr");
            let bytes = raster::encode_grid(grid, None, raster::Dtype::F32);
            std::fs::write(dir.join(&name), bytes)?;
            file_lists[h].push(name);
        }
    }
    let manifest = json!({
        "tile_id": tile_id,
        "rows": rows,
        "cols": cols,
        "slots": pred.slots(),
        "heads": {
            "enhancement": file_lists[0],
            "mask": file_lists[1],
            "origin": file_lists[2],
        },
    });
    let path = dir.join(format!("{tile_id}_manifest.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// Loads, validates and sanitizes a prediction set from its manifest:
/// probabilities are clipped to [0, 1] (counted), NaNs are zeroed
/// (counted) unless their density exceeds 0.1%.
pub fn load_external(
    manifest_path: &Path,
) -> Result<(SlotPrediction, LoadStats, String), FormatError> {
    let manifest = parse_manifest(&std::fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut stats = LoadStats::default();
    let mut heads: Vec<Vec<Grid<f64>>> = Vec::with_capacity(3);
    for (h, head) in HEADS.iter().enumerate() {
        let mut slots = Vec::with_capacity(manifest.slots);
        for (slot, name) in manifest.files[h].iter().enumerate() {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|_| FormatError::MissingSlotFile {
                head: head.to_string(),
                slot,
            })?;
            let (mut grid, _) = raster::decode_grid(&bytes)?;
            if grid.shape() != (manifest.rows, manifest.cols) {
                return Err(FormatError::BadManifest {
                    reason: format!(
                        "{name}: raster shape {:?} does not match manifest ({}, {})",
                        grid.shape(),
                        manifest.rows,
                        manifest.cols
                    ),
                });
            }
            let nans = grid.values().iter().filter(|v| v.is_nan()).count();
            if nans as f64 > MAX_NAN_DENSITY * grid.values().len() as f64 {
                return Err(FormatError::BadManifest {
                    reason: format!("{name}: NaN density {} too high", nans),
                });
            }
            stats.nans += nans;
            for v in grid.values_mut() {
                if v.is_nan() {
                    *v = 0.0;
                } else if h > 0 {
                    // Probability heads clip into [0, 1].
                    let clipped = v.clamp(0.0, 1.0);
                    if clipped != *v {
                        stats.clipped += 1;
                        *v = clipped;
                    }
                } else if *v < 0.0 {
                    stats.clipped += 1;
                    *v = 0.0;
                }
            }
            slots.push(grid);
        }
        heads.push(slots);
    }
    let origin = heads.pop().unwrap();
    let mask = heads.pop().unwrap();
    let enh = heads.pop().unwrap();
    let pred = SlotPrediction::new(enh, mask, origin).map_err(|e| FormatError::BadManifest {
        reason: e.to_string(),
    })?;
    Ok((pred, stats, manifest.tile_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_pred() -> SlotPrediction {
        SlotPrediction::new(
            vec![Grid::filled(4, 4, 120.0), Grid::zeros(4, 4)],
            vec![Grid::filled(4, 4, 0.5), Grid::zeros(4, 4)],
            vec![Grid::filled(4, 4, 0.25), Grid::zeros(4, 4)],
        )
        .unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let pred = sample_pred();
        let manifest = save_external(&pred, dir.path(), "tile-7").unwrap();
        let (back, stats, tile_id) = load_external(&manifest).unwrap();
        assert_eq!(tile_id, "tile-7");
        assert_eq!(stats, LoadStats::default());
        assert_eq!(back, pred);
    }

    #[test]
    fn out_of_range_probabilities_are_clipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let mut pred = sample_pred();
        pred.mask_prob[0].set(1, 1, 1.2);
        let manifest = save_external(&pred, dir.path(), "t").unwrap();
        let (back, stats, _) = load_external(&manifest).unwrap();
        assert_eq!(stats.clipped, 1);
        assert_eq!(back.mask_prob[0].get(1, 1), 1.0);
    }

    #[test]
    fn missing_slot_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_external(&sample_pred(), dir.path(), "t").unwrap();
        std::fs::remove_file(dir.path().join("t_origin_01.pkr")).unwrap();
        match load_external(&manifest) {
            Err(FormatError::MissingSlotFile { head, slot }) => {
                assert_eq!(head, "origin");
                assert_eq!(slot, 1);
            }
            other => panic!("expected MissingSlotFile, got {other:?}"),
        }
    }

    #[test]
    fn nan_density_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut pred = sample_pred();
        // One NaN in 16 pixels = 6%, over the 0.1% limit.
        pred.enh[0].set(0, 0, f64::NAN);
        let manifest = save_external(&pred, dir.path(), "t").unwrap();
        assert!(load_external(&manifest).is_err());
    }

    #[test]
    fn manifest_validation() {
        assert!(parse_manifest(b"not json").is_err());
        assert!(parse_manifest(b"{}").is_err());
        let doc = serde_json::json!({
            "tile_id": "x", "rows": 4, "cols": 4, "slots": 2,
            "heads": {"enhancement": ["a", "b"], "mask": ["c", "d"], "origin": ["e"]}
        });
        assert!(parse_manifest(serde_json::to_vec(&doc).unwrap().as_slice()).is_err());
        let doc = serde_json::json!({
            "tile_id": "x", "rows": 4, "cols": 4, "slots": 1,
            "heads": {"enhancement": ["../evil"], "mask": ["c"], "origin": ["e"]}
        });
        assert!(parse_manifest(serde_json::to_vec(&doc).unwrap().as_slice()).is_err());
    }
}
