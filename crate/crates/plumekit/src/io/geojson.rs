//! GeoJSON-style emission of plume records, and a reader for the same
//! documents.

use serde_json::json;

use super::FormatError;
use crate::granule::PlumeRecord;
use crate::io::raster::GeoTransform;

/// A record as read back from a GeoJSON document.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub id: u64,
    pub origin_row: f64,
    pub origin_col: f64,
    pub peak_enhancement_ppm_m: f64,
    pub mean_enhancement_ppm_m: f64,
    pub area_px: f64,
    pub detection_fraction: f64,
    pub d_cor: Option<f64>,
    pub d_norm: Option<f64>,
    pub fit_enh: Option<f64>,
    pub obs_enh: Option<f64>,
    pub fit_valid: Option<bool>,
    pub rejection_reason: Option<String>,
    /// Polygon ring as (x, y) pairs in the document's frame.
    pub polygon: Vec<(f64, f64)>,
}

fn ring_coordinates(record: &PlumeRecord, geo: Option<&GeoTransform>) -> Vec<[f64; 2]> {
    let mut coords: Vec<[f64; 2]> = record
        .polygon_px
        .iter()
        .map(|&(row, col)| match geo {
            // Pixel frame: x = column, y = row.
            None => [col, row],
            Some(g) => {
                let (x, y) = g.apply(row, col);
                [x, y]
            }
        })
        .collect();
    if coords.first() != coords.last() {
        if let Some(&first) = coords.first() {
            coords.push(first);
        }
    }
    coords
}

fn record_feature(record: &PlumeRecord, geo: Option<&GeoTransform>) -> serde_json::Value {
    let mut properties = json!({
        "id": record.id,
        "origin_row": record.origin_px.0,
        "origin_col": record.origin_px.1,
        "peak_enhancement_ppm_m": record.peak_enhancement_ppm_m,
        "mean_enhancement_ppm_m": record.mean_enhancement_ppm_m,
        "area_px": record.area_px,
        "detection_fraction": record.detection_fraction,
    });
    if let Some(g) = geo {
        let (x, y) = g.apply(record.origin_px.0, record.origin_px.1);
        properties["origin_x"] = json!(x);
        properties["origin_y"] = json!(y);
    }
    if let Some(fit) = &record.fit {
        properties["d_cor"] = json!(fit.d_cor);
        properties["d_norm"] = json!(fit.d_norm);
        properties["fit_enh"] = json!(fit.fit_enh);
        properties["obs_enh"] = json!(fit.obs_enh);
        properties["fit_valid"] = json!(fit.valid);
    }
    if let Some(reason) = record.rejection {
        properties["rejection_reason"] = json!(reason.as_str());
    }
    json!({
        "type": "Feature",
        "geometry": {
            "type": "Polygon",
            "coordinates": [ring_coordinates(record, geo)],
        },
        "properties": properties,
    })
}

/// Builds a feature collection from kept and rejected records (rejected
/// ones carry their `rejection_reason`).
pub fn records_to_geojson(
    kept: &[PlumeRecord],
    rejected: &[PlumeRecord],
    geo: Option<&GeoTransform>,
) -> serde_json::Value {
    let features: Vec<serde_json::Value> = kept
        .iter()
        .chain(rejected)
        .map(|r| record_feature(r, geo))
        .collect();
    json!({
        "type": "FeatureCollection",
        "features": features,
    })
}

/// Parses a feature collection written by [`records_to_geojson`].
pub fn records_from_geojson(text: &str) -> Result<Vec<RecordSummary>, FormatError> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    let bad = |reason: &str| FormatError::Corrupt {
        format: "geojson records",
        reason: reason.to_string(),
    };
    if doc["type"] != "FeatureCollection" {
        return Err(bad("not a FeatureCollection"));
    }
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| bad("missing features array"))?;
    let mut out = Vec::with_capacity(features.len());
    for feature in features {
        let props = feature["properties"]
            .as_object()
            .ok_or_else(|| bad("feature without properties"))?;
        let num = |key: &str| -> Result<f64, FormatError> {
            props
                .get(key)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| bad(&format!("missing numeric property {key}")))
        };
        let opt_num = |key: &str| props.get(key).and_then(|v| v.as_f64());
        let ring = feature["geometry"]["coordinates"][0]
            .as_array()
            .ok_or_else(|| bad("missing polygon ring"))?
            .iter()
            .map(|pt| {
                let x = pt[0].as_f64().ok_or_else(|| bad("bad coordinate"))?;
                let y = pt[1].as_f64().ok_or_else(|| bad("bad coordinate"))?;
                Ok((x, y))
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        out.push(RecordSummary {
            id: props.get("id").and_then(|v| v.as_u64()).unwrap_or(0),
            origin_row: num("origin_row")?,
            origin_col: num("origin_col")?,
            peak_enhancement_ppm_m: num("peak_enhancement_ppm_m")?,
            mean_enhancement_ppm_m: num("mean_enhancement_ppm_m")?,
            area_px: num("area_px")?,
            detection_fraction: num("detection_fraction")?,
            d_cor: opt_num("d_cor"),
            d_norm: opt_num("d_norm"),
            fit_enh: opt_num("fit_enh"),
            obs_enh: opt_num("obs_enh"),
            fit_valid: props.get("fit_valid").and_then(|v| v.as_bool()),
            rejection_reason: props
                .get("rejection_reason")
                .and_then(|v| v.as_str())
                .map(str::to_string),
            polygon: ring,
        });
    }
    Ok(out)
}
