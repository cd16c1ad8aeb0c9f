//! Radiance cubes and the model-input normalization chain: solar
//! blackbody normalization, cross-track striping correction and band
//! exclusion.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::spectral::{BandSrf, SpectralError, WavelengthGrid};

#[derive(Debug, Error)]
pub enum RadianceError {
    #[error("crosstrack id list length {got} does not match column count {cols}")]
    CrosstrackLength { got: usize, cols: usize },
    #[error("planck inputs must be positive: lambda={lambda_um} um, T={temp_k} K")]
    PlanckDomain { lambda_um: f64, temp_k: f64 },
    #[error("normalizer has {factors} factors but cube has {bands} bands")]
    FactorCount { factors: usize, bands: usize },
    #[error("cross-track table missing entry for band {band}, position {position}")]
    MissingTableEntry { band: usize, position: u32 },
    #[error("cross-track mean for band {band}, position {position} is not positive")]
    NonPositiveMean { band: usize, position: u32 },
    #[error("order-sorting-filter set must have exactly 7 indices, got {0}")]
    OsfCount(usize),
    #[error("order-sorting-filter index {index} overlaps the excluded edge bands")]
    OsfOutOfRange { index: usize },
    #[error("cube must keep at least one band after exclusion")]
    NoBandsLeft,
    #[error("cross-track table line {line}: {reason}")]
    TableParse { line: usize, reason: String },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// At-sensor radiance cube, pixel-major layout: the spectrum of a pixel
/// is contiguous. Negative values are passed through unchanged (sensor
/// noise around dark scenes).
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
    crosstrack_ids: Vec<u32>,
}

impl RadianceCube {
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        data: Vec<f64>,
        crosstrack_ids: Vec<u32>,
    ) -> Result<Self, RadianceError> {
        assert_eq!(data.len(), rows * cols * bands, "cube buffer length");
        if crosstrack_ids.len() != cols {
            return Err(RadianceError::CrosstrackLength {
                got: crosstrack_ids.len(),
                cols,
            });
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
            crosstrack_ids,
        })
    }

    /// Cube with every pixel set to `spectrum` and column index as
    /// cross-track id.
    pub fn from_spectrum(rows: usize, cols: usize, spectrum: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rows * cols * spectrum.len());
        for _ in 0..rows * cols {
            data.extend_from_slice(spectrum);
        }
        Self {
            rows,
            cols,
            bands: spectrum.len(),
            data,
            crosstrack_ids: (0..cols as u32).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn crosstrack_ids(&self) -> &[u32] {
        &self.crosstrack_ids
    }

    pub fn set_crosstrack_ids(&mut self, ids: Vec<u32>) -> Result<(), RadianceError> {
        if ids.len() != self.cols {
            return Err(RadianceError::CrosstrackLength {
                got: ids.len(),
                cols: self.cols,
            });
        }
        self.crosstrack_ids = ids;
        Ok(())
    }

    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.cols + col) * self.bands;
        &self.data[base..base + self.bands]
    }

    #[inline]
    pub fn spectrum_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let base = (row * self.cols + col) * self.bands;
        &mut self.data[base..base + self.bands]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies the square window with top-left corner `(row_off, col_off)`.
    pub fn crop(&self, row_off: usize, col_off: usize, size: usize) -> RadianceCube {
        assert!(row_off + size <= self.rows && col_off + size <= self.cols);
        let mut data = Vec::with_capacity(size * size * self.bands);
        for r in row_off..row_off + size {
            let start = (r * self.cols + col_off) * self.bands;
            data.extend_from_slice(&self.data[start..start + size * self.bands]);
        }
        RadianceCube {
            rows: size,
            cols: size,
            bands: self.bands,
            data,
            crosstrack_ids: self.crosstrack_ids[col_off..col_off + size].to_vec(),
        }
    }
}

/// Blackbody spectral radiance per unit wavelength, SI units
/// (W sr^-1 m^-3), with the wavelength given in micrometers.
pub fn planck_spectral_radiance(lambda_um: f64, temp_k: f64) -> Result<f64, RadianceError> {
    if !(lambda_um > 0.0) || !(temp_k > 0.0) {
        return Err(RadianceError::PlanckDomain { lambda_um, temp_k });
    }
    const H: f64 = 6.62607015e-34;
    const C: f64 = 2.99792458e8;
    const KB: f64 = 1.380649e-23;
    let lambda = lambda_um * 1e-6;
    let x = H * C / (lambda * KB * temp_k);
    Ok(2.0 * H * C * C / lambda.powi(5) / (x.exp() - 1.0))
}

/// Solar temperature used for the irradiance shape.
pub const SOLAR_TEMP_K: f64 = 5778.0;

/// Empirical scale applied with the solar factors to bring normalized
/// radiances into a rough 0-1 range.
pub const SOLAR_SCALE_CONSTANT: f64 = 4.0e-7;

/// Per-band solar irradiance factors for pseudo-reflectance conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct SolarNormalizer {
    pub factors: Vec<f64>,
    pub scale_constant: f64,
}

/// Band-integrates the 5778 K blackbody curve against each response to
/// obtain the per-band solar factor.
pub fn build_solar_normalizer(
    srfs: &[BandSrf],
    grid: &WavelengthGrid,
) -> Result<SolarNormalizer, RadianceError> {
    let mut factors = Vec::with_capacity(srfs.len());
    for srf in srfs {
        let (i0, weights) = srf.sampled_weights(grid)?;
        let mut acc = 0.0;
        for (k, w) in weights.iter().enumerate() {
            acc += w * planck_spectral_radiance(grid.wavelength(i0 + k), SOLAR_TEMP_K)?;
        }
        factors.push(acc);
    }
    Ok(SolarNormalizer {
        factors,
        scale_constant: SOLAR_SCALE_CONSTANT,
    })
}

impl SolarNormalizer {
    fn divisor(&self, band: usize) -> f64 {
        self.factors[band] / self.scale_constant
    }

    /// Converts radiance to pseudo-reflectance by dividing each band by
    /// its scaled solar factor.
    pub fn normalize(&self, cube: &RadianceCube) -> Result<RadianceCube, RadianceError> {
        self.apply(cube, false)
    }

    /// Inverse of [`Self::normalize`].
    pub fn denormalize(&self, cube: &RadianceCube) -> Result<RadianceCube, RadianceError> {
        self.apply(cube, true)
    }

    fn apply(&self, cube: &RadianceCube, invert: bool) -> Result<RadianceCube, RadianceError> {
        if self.factors.len() != cube.bands {
            return Err(RadianceError::FactorCount {
                factors: self.factors.len(),
                bands: cube.bands,
            });
        }
        let mut out = cube.clone();
        for px in 0..cube.rows * cube.cols {
            let base = px * cube.bands;
            for b in 0..cube.bands {
                let d = self.divisor(b);
                if invert {
                    out.data[base + b] *= d;
                } else {
                    out.data[base + b] /= d;
                }
            }
        }
        Ok(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("band,factor\n");
        for (b, f) in self.factors.iter().enumerate() {
            out.push_str(&format!("{b},{f:.12e}\n"));
        }
        out
    }
}

/// Mean radiance per band and cross-track position, used to undo
/// multiplicative striping.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTrackTable {
    positions: Vec<u32>,
    /// `[band][position_index]`, positive wherever defined.
    means: Vec<f64>,
    global_means: Vec<f64>,
    bands: usize,
}

impl CrossTrackTable {
    pub fn new(positions: Vec<u32>, means: Vec<f64>, bands: usize) -> Result<Self, RadianceError> {
        assert_eq!(means.len(), bands * positions.len(), "table shape");
        for (i, &m) in means.iter().enumerate() {
            if !(m > 0.0) {
                return Err(RadianceError::NonPositiveMean {
                    band: i / positions.len(),
                    position: positions[i % positions.len()],
                });
            }
        }
        let n = positions.len();
        let global_means = (0..bands)
            .map(|b| means[b * n..(b + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        Ok(Self {
            positions,
            means,
            global_means,
            bands,
        })
    }

    /// Accumulates per-(band, position) means over all pixels of the
    /// given cubes.
    pub fn from_cubes(cubes: &[&RadianceCube]) -> Result<Self, RadianceError> {
        assert!(!cubes.is_empty());
        let bands = cubes[0].bands;
        let mut sums: BTreeMap<u32, (Vec<f64>, u64)> = BTreeMap::new();
        for cube in cubes {
            assert_eq!(cube.bands, bands, "cubes must share a band set");
            for col in 0..cube.cols {
                let entry = sums
                    .entry(cube.crosstrack_ids[col])
                    .or_insert_with(|| (vec![0.0; bands], 0));
                for row in 0..cube.rows {
                    let spec = cube.spectrum(row, col);
                    for (acc, &v) in entry.0.iter_mut().zip(spec) {
                        *acc += v;
                    }
                }
                entry.1 += cube.rows as u64;
            }
        }
        let positions: Vec<u32> = sums.keys().copied().collect();
        let mut means = vec![0.0; bands * positions.len()];
        for (idx, (_, (sum, count))) in sums.iter().enumerate() {
            for b in 0..bands {
                means[b * positions.len() + idx] = sum[b] / *count as f64;
            }
        }
        Self::new(positions, means, bands)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn mean(&self, band: usize, position: u32) -> Option<f64> {
        let idx = self.positions.binary_search(&position).ok()?;
        Some(self.means[band * self.positions.len() + idx])
    }

    pub fn global_mean(&self, band: usize) -> f64 {
        self.global_means[band]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("band,position,mean\n");
        for b in 0..self.bands {
            for (i, &p) in self.positions.iter().enumerate() {
                out.push_str(&format!(
                    "{b},{p},{:.12e}\n",
                    self.means[b * self.positions.len() + i]
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), RadianceError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, RadianceError> {
        parse_crosstrack_csv(&std::fs::read_to_string(path)?)
    }
}

/// Parses a `band,position,mean` table. Every band must cover the same
/// position set and all means must be positive.
pub fn parse_crosstrack_csv(text: &str) -> Result<CrossTrackTable, RadianceError> {
    let mut entries: BTreeMap<(usize, u32), f64> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("band,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(RadianceError::TableParse {
                line: line_no,
                reason: "expected band,position,mean".into(),
            });
        }
        let band: usize = parts[0].parse().map_err(|_| RadianceError::TableParse {
            line: line_no,
            reason: format!("bad band index {:?}", parts[0]),
        })?;
        let position: u32 = parts[1].parse().map_err(|_| RadianceError::TableParse {
            line: line_no,
            reason: format!("bad position {:?}", parts[1]),
        })?;
        let mean: f64 = parts[2].parse().map_err(|_| RadianceError::TableParse {
            line: line_no,
            reason: format!("bad mean {:?}", parts[2]),
        })?;
        if !mean.is_finite() || mean <= 0.0 {
            return Err(RadianceError::TableParse {
                line: line_no,
                reason: format!("mean must be positive, got {mean}"),
            });
        }
        if entries.insert((band, position), mean).is_some() {
            return Err(RadianceError::TableParse {
                line: line_no,
                reason: format!("duplicate entry for band {band}, position {position}"),
            });
        }
        if band > 4096 || entries.len() > 4_000_000 {
            return Err(RadianceError::TableParse {
                line: line_no,
                reason: "table too large".into(),
            });
        }
    }
    if entries.is_empty() {
        return Err(RadianceError::TableParse {
            line: 0,
            reason: "empty table".into(),
        });
    }
    let bands = entries.keys().map(|&(b, _)| b).max().unwrap() + 1;
    let positions: Vec<u32> = entries
        .keys()
        .filter(|&&(b, _)| b == 0)
        .map(|&(_, p)| p)
        .collect();
    if entries.len() != bands * positions.len() {
        return Err(RadianceError::TableParse {
            line: 0,
            reason: "ragged table: bands cover different position sets".into(),
        });
    }
    let mut means = vec![0.0; bands * positions.len()];
    for b in 0..bands {
        for (i, &p) in positions.iter().enumerate() {
            means[b * positions.len() + i] =
                *entries.get(&(b, p)).ok_or(RadianceError::TableParse {
                    line: 0,
                    reason: format!("band {b} is missing position {p}"),
                })?;
        }
    }
    CrossTrackTable::new(positions, means, bands)
}

/// Rescales every pixel by `global_mean / positional_mean` for its band
/// and cross-track position.
pub fn crosstrack_correct(
    cube: &RadianceCube,
    table: &CrossTrackTable,
) -> Result<RadianceCube, RadianceError> {
    if table.bands != cube.bands {
        return Err(RadianceError::FactorCount {
            factors: table.bands,
            bands: cube.bands,
        });
    }
    // Resolve per-column gain vectors up front so missing entries fail
    // before any pixel is touched.
    let mut gains: Vec<Vec<f64>> = Vec::with_capacity(cube.cols);
    for col in 0..cube.cols {
        let position = cube.crosstrack_ids[col];
        let mut g = Vec::with_capacity(cube.bands);
        for band in 0..cube.bands {
            let mean = table
                .mean(band, position)
                .ok_or(RadianceError::MissingTableEntry { band, position })?;
            g.push(table.global_mean(band) / mean);
        }
        gains.push(g);
    }
    let mut out = cube.clone();
    for row in 0..cube.rows {
        for col in 0..cube.cols {
            let spec = out.spectrum_mut(row, col);
            for (v, g) in spec.iter_mut().zip(&gains[col]) {
                *v *= g;
            }
        }
    }
    Ok(out)
}

/// Drops the seven order-sorting-filter bands plus the first and last
/// three bands; survivors keep their order and values.
pub fn select_bands(
    cube: &RadianceCube,
    osf_band_indices: &[usize],
) -> Result<RadianceCube, RadianceError> {
    if osf_band_indices.len() != 7 {
        return Err(RadianceError::OsfCount(osf_band_indices.len()));
    }
    let bands = cube.bands;
    if bands < 14 {
        return Err(RadianceError::NoBandsLeft);
    }
    let mut drop = vec![false; bands];
    for &i in osf_band_indices {
        if i < 3 || i > bands - 4 {
            return Err(RadianceError::OsfOutOfRange { index: i });
        }
        if drop[i] {
            return Err(RadianceError::TableParse {
                line: 0,
                reason: format!("duplicate OSF band index {i}"),
            });
        }
        drop[i] = true;
    }
    for i in 0..3 {
        drop[i] = true;
        drop[bands - 1 - i] = true;
    }
    let keep: Vec<usize> = (0..bands).filter(|&b| !drop[b]).collect();
    let mut data = Vec::with_capacity(cube.rows * cube.cols * keep.len());
    for px in 0..cube.rows * cube.cols {
        let base = px * bands;
        for &b in &keep {
            data.push(cube.data[base + b]);
        }
    }
    Ok(RadianceCube {
        rows: cube.rows,
        cols: cube.cols,
        bands: keep.len(),
        data,
        crosstrack_ids: cube.crosstrack_ids.clone(),
    })
}
