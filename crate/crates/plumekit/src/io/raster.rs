//! Versioned binary raster container: magic, dimensions, band count,
//! dtype, optional geotransform, optional cross-track ids, row-major
//! little-endian payload (pixel-major band interleave).

use std::path::Path;

use super::{push_f64, push_u32, FormatError, Reader};
use crate::grid::Grid;
use crate::radiance::RadianceCube;

const MAGIC: &[u8; 8] = b"PKRAST01";
const FORMAT: &'static str = "raster container";

/// Hard cap on decoded payload elements; rejects absurd headers before
/// any allocation.
const MAX_ELEMENTS: usize = 1 << 30;

/// Payload element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// GDAL-style affine geotransform
/// `(x, y) = (c[0] + col c[1] + row c[2], c[3] + col c[4] + row c[5])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub fn apply(&self, row: f64, col: f64) -> (f64, f64) {
        let c = &self.0;
        (c[0] + col * c[1] + row * c[2], c[3] + col * c[4] + row * c[5])
    }
}

/// A decoded raster: cube data plus optional geotransform.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub cube: RadianceCube,
    pub geo: Option<GeoTransform>,
}

/// Encodes a cube (with optional geotransform) into the container.
pub fn encode_cube(cube: &RadianceCube, geo: Option<&GeoTransform>, dtype: Dtype) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, cube.rows() as u32);
    push_u32(&mut buf, cube.cols() as u32);
    push_u32(&mut buf, cube.bands() as u32);
    buf.push(match dtype {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    });
    match geo {
        Some(g) => {
            buf.push(1);
            for v in g.0 {
                push_f64(&mut buf, v);
            }
        }
        None => buf.push(0),
    }
    buf.push(1); // cross-track ids present
    for &id in cube.crosstrack_ids() {
        push_u32(&mut buf, id);
    }
    match dtype {
        Dtype::F32 => {
            for &v in cube.values() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in cube.values() {
                push_f64(&mut buf, v);
            }
        }
    }
    buf
}

/// Encodes a single-band grid.
pub fn encode_grid(grid: &Grid<f64>, geo: Option<&GeoTransform>, dtype: Dtype) -> Vec<u8> {
    let cube = RadianceCube::new(
        grid.rows(),
        grid.cols(),
        1,
        grid.values().to_vec(),
        (0..grid.cols() as u32).collect(),
    )
    .expect("grid shapes are consistent");
    encode_cube(&cube, geo, dtype)
}

/// Decodes a container produced by [`encode_cube`] / [`encode_grid`].
pub fn decode(bytes: &[u8]) -> Result<Raster, FormatError> {
    let mut r = Reader::new(FORMAT, bytes);
    r.magic(MAGIC)?;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let bands = r.u32("bands")? as usize;
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(r.corrupt("zero dimension"));
    }
    let elements = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(bands))
        .filter(|&v| v <= MAX_ELEMENTS)
        .ok_or_else(|| r.corrupt("dimensions overflow"))?;
    let dtype = match r.u8("dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(r.corrupt(format!("unknown dtype {other}"))),
    };
    let geo = match r.u8("geo flag")? {
        0 => None,
        1 => {
            let c = r.f64s(6, "geotransform")?;
            Some(GeoTransform([c[0], c[1], c[2], c[3], c[4], c[5]]))
        }
        other => return Err(r.corrupt(format!("bad geo flag {other}"))),
    };
    let crosstrack_ids = match r.u8("crosstrack flag")? {
        0 => (0..cols as u32).collect(),
        1 => {
            let raw = r.take(4 * cols, "crosstrack ids")?;
            raw.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        other => return Err(r.corrupt(format!("bad crosstrack flag {other}"))),
    };
    let elem_size = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if r.remaining() != elements * elem_size {
        return Err(r.corrupt(format!(
            "payload length {} does not match header (expected {})",
            r.remaining(),
            elements * elem_size
        )));
    }
    let data = match dtype {
        Dtype::F32 => r.f32s_as_f64(elements, "payload")?,
        Dtype::F64 => r.f64s(elements, "payload")?,
    };
    let cube = RadianceCube::new(rows, cols, bands, data, crosstrack_ids)
        .map_err(|e| FormatError::Corrupt {
            format: FORMAT,
            reason: e.to_string(),
        })?;
    Ok(Raster { cube, geo })
}

/// Decodes and flattens a single-band raster into a grid.
pub fn decode_grid(bytes: &[u8]) -> Result<(Grid<f64>, Option<GeoTransform>), FormatError> {
    let raster = decode(bytes)?;
    if raster.cube.bands() != 1 {
        return Err(FormatError::Corrupt {
            format: FORMAT,
            reason: format!("expected 1 band, got {}", raster.cube.bands()),
        });
    }
    Ok((
        Grid::from_vec(
            raster.cube.rows(),
            raster.cube.cols(),
            raster.cube.values().to_vec(),
        ),
        raster.geo,
    ))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Raster, FormatError> {
    decode(&std::fs::read(path)?)
}
