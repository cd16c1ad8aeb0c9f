//! Plume tile container: a header (grid size, pixel size), then tile
//! records. Each tile carries its plumes (concentration grid as f32,
//! mask bitset, origin, emission window), optionally an embedded
//! radiance cube, and a JSON provenance blob (tile id, seed, emission
//! rates, wind).

use std::path::Path;

use super::{push_f64, push_u32, FormatError, Reader};
use crate::grid::{Grid, MaskGrid};
use crate::io::raster;
use crate::radiance::RadianceCube;
use crate::sim::CroppedPlume;

const MAGIC: &[u8; 8] = b"PKTILE01";
const FORMAT: &'static str = "tile container";
const MAX_TILE_PX: usize = 1 << 24;
const MAX_PLUMES_PER_TILE: usize = 64;
const MAX_TILES: usize = 1 << 20;

/// One plume cropped to tile coordinates, as stored on disk.
pub type TilePlume = CroppedPlume;

/// One dataset tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub plumes: Vec<TilePlume>,
    pub radiance: Option<RadianceCube>,
    /// Free-form provenance: tile id, seed, per-plume emission rates,
    /// wind speed.
    pub provenance: Option<serde_json::Value>,
}

/// A homogeneous set of tiles sharing grid and pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub tile_size: usize,
    pub pixel_size_m: f64,
    pub tiles: Vec<Tile>,
}

fn push_mask(buf: &mut Vec<u8>, mask: &MaskGrid) {
    let mut byte = 0_u8;
    let mut bits = 0;
    for &b in mask.values() {
        byte |= (b as u8) << bits;
        bits += 1;
        if bits == 8 {
            buf.push(byte);
            byte = 0;
            bits = 0;
        }
    }
    if bits > 0 {
        buf.push(byte);
    }
}

fn read_mask(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<MaskGrid, FormatError> {
    let n = rows * cols;
    let bytes = r.take(n.div_ceil(8), "mask bits")?;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        values.push(bytes[i / 8] >> (i % 8) & 1 == 1);
    }
    Ok(MaskGrid::from_vec(rows, cols, values))
}

impl TileSet {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, self.tile_size as u32);
        push_f64(&mut buf, self.pixel_size_m);
        push_u32(&mut buf, self.tiles.len() as u32);
        for tile in &self.tiles {
            push_u32(&mut buf, tile.plumes.len() as u32);
            for plume in &tile.plumes {
                match plume.origin_px {
                    Some((r, c)) => {
                        buf.push(1);
                        push_f64(&mut buf, r);
                        push_f64(&mut buf, c);
                    }
                    None => {
                        buf.push(0);
                        push_f64(&mut buf, 0.0);
                        push_f64(&mut buf, 0.0);
                    }
                }
                push_f64(&mut buf, plume.emit_window_s.0);
                push_f64(&mut buf, plume.emit_window_s.1);
                for &v in plume.conc.values() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
                push_mask(&mut buf, &plume.mask);
            }
            match &tile.radiance {
                Some(cube) => {
                    buf.push(1);
                    let blob = raster::encode_cube(cube, None, raster::Dtype::F32);
                    push_u32(&mut buf, blob.len() as u32);
                    buf.extend_from_slice(&blob);
                }
                None => buf.push(0),
            }
            match &tile.provenance {
                Some(value) => {
                    buf.push(1);
                    let json = serde_json::to_vec(value).expect("provenance serializes");
                    push_u32(&mut buf, json.len() as u32);
                    buf.extend_from_slice(&json);
                }
                None => buf.push(0),
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(FORMAT, bytes);
        r.magic(MAGIC)?;
        let tile_size = r.u32("tile size")? as usize;
        let pixel_size_m = r.f64("pixel size")?;
        if tile_size == 0 || tile_size * tile_size > MAX_TILE_PX {
            return Err(r.corrupt(format!("unreasonable tile size {tile_size}")));
        }
        if !(pixel_size_m > 0.0 && pixel_size_m.is_finite()) {
            return Err(r.corrupt("pixel size must be positive"));
        }
        let tile_count = r.u32("tile count")? as usize;
        if tile_count > MAX_TILES {
            return Err(r.corrupt("tile count too large"));
        }
        let px = tile_size * tile_size;
        let mut tiles = Vec::new();
        for _ in 0..tile_count {
            let plume_count = r.u32("plume count")? as usize;
            if plume_count > MAX_PLUMES_PER_TILE {
                return Err(r.corrupt(format!("plume count {plume_count} too large")));
            }
            let mut plumes = Vec::with_capacity(plume_count);
            for _ in 0..plume_count {
                let origin_flag = r.u8("origin flag")?;
                let or = r.f64("origin row")?;
                let oc = r.f64("origin col")?;
                let origin_px = match origin_flag {
                    0 => None,
                    1 => Some((or, oc)),
                    other => return Err(r.corrupt(format!("bad origin flag {other}"))),
                };
                let emit = (r.f64("emit start")?, r.f64("emit end")?);
                let conc_values = r.f32s_as_f64(px, "concentration grid")?;
                if conc_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(r.corrupt("concentration must be finite and non-negative"));
                }
                let conc = Grid::from_vec(tile_size, tile_size, conc_values);
                let mask = read_mask(&mut r, tile_size, tile_size)?;
                plumes.push(TilePlume {
                    conc,
                    mask,
                    origin_px,
                    emit_window_s: emit,
                });
            }
            let radiance = match r.u8("radiance flag")? {
                0 => None,
                1 => {
                    let len = r.u32("radiance blob length")? as usize;
                    let blob = r.take(len, "radiance blob")?;
                    let raster = raster::decode(blob)?;
                    if raster.cube.rows() != tile_size || raster.cube.cols() != tile_size {
                        return Err(r.corrupt("embedded radiance shape mismatch"));
                    }
                    Some(raster.cube)
                }
                other => return Err(r.corrupt(format!("bad radiance flag {other}"))),
            };
            let provenance = match r.u8("provenance flag")? {
                0 => None,
                1 => {
                    let len = r.u32("provenance length")? as usize;
                    let blob = r.take(len, "provenance json")?;
                    Some(serde_json::from_slice(blob)?)
                }
                other => return Err(r.corrupt(format!("bad provenance flag {other}"))),
            };
            tiles.push(Tile {
                plumes,
                radiance,
                provenance,
            });
        }
        if r.remaining() != 0 {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Self {
            tile_size,
            pixel_size_m,
            tiles,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, FormatError> {
        Self::decode(&std::fs::read(path)?)
    }
}
