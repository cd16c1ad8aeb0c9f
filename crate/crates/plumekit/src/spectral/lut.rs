//! Methane transmittance-ratio lookup table.
//!
//! Each entry holds the log of the band-integrated transmittance ratio
//! between a methane-enhanced atmosphere and the background atmosphere,
//! tabulated over (column concentration, path-length multiplier).
//! Queries interpolate bilinearly in log space and exponentiate.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::srf::BandSrf;
use super::transmittance::{TransmittancePair, REFERENCE_CH4_PPM_M};
use super::SpectralError;

/// Transmittances below this floor are clamped before exponentiation and
/// logs, keeping saturated lines finite.
const TRANSMITTANCE_FLOOR: f64 = 1e-12;

/// Per-band log transmittance-ratio table over (concentration,
/// path-length multiplier). Immutable after construction and safe to
/// share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MethaneLut {
    band_centers_um: Vec<f64>,
    band_fwhm_um: Vec<f64>,
    conc_axis: Vec<f64>,
    plm_axis: Vec<f64>,
    /// Row-major `[band][conc][plm]`, all entries <= 0.
    log_ratio: Vec<f64>,
}

/// Total atmospheric path in vertical-column units for the given solar
/// and sensor zenith angles: `1/cos(solar) + 1/cos(sensor)`.
pub fn path_length_multiplier(
    solar_zenith_deg: f64,
    sat_zenith_deg: f64,
) -> Result<f64, SpectralError> {
    for angle_deg in [solar_zenith_deg, sat_zenith_deg] {
        if !(0.0..90.0).contains(&angle_deg) || !angle_deg.is_finite() {
            return Err(SpectralError::InvalidZenith { angle_deg });
        }
    }
    let rad = std::f64::consts::PI / 180.0;
    Ok(1.0 / (solar_zenith_deg * rad).cos() + 1.0 / (sat_zenith_deg * rad).cos())
}

/// Concentration axis used by the shipped tables: 0-900 by 100, 1000-9000
/// by 1000, and a 100,000 ppm-m sentinel.
pub fn default_conc_axis() -> Vec<f64> {
    let mut axis: Vec<f64> = (0..10).map(|i| 100.0 * i as f64).collect();
    axis.extend((1..10).map(|i| 1000.0 * i as f64));
    axis.push(100_000.0);
    axis
}

/// Path-length multiplier axis: nadir-adjacent values plus a sentinel.
pub fn default_plm_axis() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0, 100.0]
}

fn validate_axes(conc_axis: &[f64], plm_axis: &[f64]) -> Result<(), SpectralError> {
    if conc_axis.len() < 2 || plm_axis.len() < 2 {
        return Err(SpectralError::EmptyTable);
    }
    for axis in [conc_axis, plm_axis] {
        if axis.windows(2).any(|w| w[0] >= w[1]) || axis.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::AxisNotSorted);
        }
    }
    if conc_axis[0] != 0.0 {
        return Err(SpectralError::AxisMissingZero);
    }
    if plm_axis[0] < 1.0 {
        return Err(SpectralError::AxisBelowOne);
    }
    Ok(())
}

/// Builds the lookup table by band-integrating the methane-scaled
/// transmittances against each Gaussian response.
///
/// For concentration `x` the enhanced spectrum follows the reference
/// 150 ppm-m atmosphere raised to `x/150`; both atmospheres are raised
/// to the path-length multiplier before band integration.
pub fn build_lut(
    pair: &TransmittancePair,
    srfs: &[BandSrf],
    conc_axis: Vec<f64>,
    plm_axis: Vec<f64>,
) -> Result<MethaneLut, SpectralError> {
    validate_axes(&conc_axis, &plm_axis)?;
    if srfs.is_empty() {
        return Err(SpectralError::EmptyTable);
    }

    let band_tables: Vec<Vec<f64>> = srfs
        .par_iter()
        .map(|srf| band_table(pair, srf, &conc_axis, &plm_axis))
        .collect::<Result<_, _>>()?;

    let mut log_ratio = Vec::with_capacity(srfs.len() * conc_axis.len() * plm_axis.len());
    for table in band_tables {
        log_ratio.extend(table);
    }
    Ok(MethaneLut {
        band_centers_um: srfs.iter().map(|b| b.center_um).collect(),
        band_fwhm_um: srfs.iter().map(|b| b.fwhm_um).collect(),
        conc_axis,
        plm_axis,
        log_ratio,
    })
}

// One band's [conc][plm] sub-table.
fn band_table(
    pair: &TransmittancePair,
    srf: &BandSrf,
    conc_axis: &[f64],
    plm_axis: &[f64],
) -> Result<Vec<f64>, SpectralError> {
    let (i0, weights) = srf.sampled_weights(&pair.grid)?;
    let t_std = &pair.t_std[i0..i0 + weights.len()];
    let t_ch4 = &pair.t_ch4_150[i0..i0 + weights.len()];
    // log of the per-wavelength 150 ppm-m ratio; scales linearly with
    // concentration in the exponent.
    let log_rho: Vec<f64> = t_std
        .iter()
        .zip(t_ch4)
        .map(|(&s, &m)| (m.max(TRANSMITTANCE_FLOOR) / s.max(TRANSMITTANCE_FLOOR)).ln())
        .collect();

    let mut out = Vec::with_capacity(conc_axis.len() * plm_axis.len());
    for &conc in conc_axis {
        let scale = conc / REFERENCE_CH4_PPM_M;
        for &plm in plm_axis {
            let mut num = 0.0;
            let mut den = 0.0;
            for ((&w, &s), &lr) in weights.iter().zip(t_std).zip(&log_rho) {
                let s = s.max(TRANSMITTANCE_FLOOR);
                let t_enh = s * (scale * lr).exp();
                num += w * t_enh.powf(plm).max(TRANSMITTANCE_FLOOR);
                den += w * s.powf(plm).max(TRANSMITTANCE_FLOOR);
            }
            out.push((num / den).ln().min(0.0));
        }
    }
    Ok(out)
}

impl MethaneLut {
    pub fn bands(&self) -> usize {
        self.band_centers_um.len()
    }

    pub fn band_centers_um(&self) -> &[f64] {
        &self.band_centers_um
    }

    pub fn band_fwhm_um(&self) -> &[f64] {
        &self.band_fwhm_um
    }

    pub fn conc_axis(&self) -> &[f64] {
        &self.conc_axis
    }

    pub fn plm_axis(&self) -> &[f64] {
        &self.plm_axis
    }

    #[inline]
    pub fn log_ratio_at(&self, band: usize, conc_idx: usize, plm_idx: usize) -> f64 {
        self.log_ratio
            [(band * self.conc_axis.len() + conc_idx) * self.plm_axis.len() + plm_idx]
    }

    /// Per-band transmittance ratio for a column enhancement `conc`
    /// (ppm-m) at path-length multiplier `plm`. Inputs beyond the axis
    /// maxima clamp to the last node.
    pub fn query_ratio(&self, conc: f64, plm: f64) -> Result<Vec<f64>, SpectralError> {
        let mut out = vec![0.0; self.bands()];
        self.query_log_ratio_into(conc, plm, &mut out)?;
        for v in &mut out {
            *v = v.exp();
        }
        Ok(out)
    }

    /// Log-space variant of [`Self::query_ratio`], writing one value per
    /// band into `out`.
    pub fn query_log_ratio_into(
        &self,
        conc: f64,
        plm: f64,
        out: &mut [f64],
    ) -> Result<(), SpectralError> {
        assert_eq!(out.len(), self.bands());
        if conc < 0.0 || conc.is_nan() {
            return Err(SpectralError::NegativeConcentration { conc });
        }
        if plm < self.plm_axis[0] || plm.is_nan() {
            return Err(SpectralError::PlmBelowAxis {
                plm,
                min: self.plm_axis[0],
            });
        }
        let (c0, c1, tc) = bracket(&self.conc_axis, conc);
        let (p0, p1, tp) = bracket(&self.plm_axis, plm);
        let n_plm = self.plm_axis.len();
        let n_conc = self.conc_axis.len();
        for (band, slot) in out.iter_mut().enumerate() {
            let base = band * n_conc;
            let g00 = self.log_ratio[(base + c0) * n_plm + p0];
            let g01 = self.log_ratio[(base + c0) * n_plm + p1];
            let g10 = self.log_ratio[(base + c1) * n_plm + p0];
            let g11 = self.log_ratio[(base + c1) * n_plm + p1];
            let lo = g00 * (1.0 - tp) + g01 * tp;
            let hi = g10 * (1.0 - tp) + g11 * tp;
            *slot = lo * (1.0 - tc) + hi * tc;
        }
        Ok(())
    }

    // --- persistence ---------------------------------------------------

    const MAGIC: &'static [u8; 8] = b"PKLUT001";

    /// Serializes to the little-endian binary blob format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        let push_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
        push_u32(&mut buf, self.bands());
        push_u32(&mut buf, self.conc_axis.len());
        push_u32(&mut buf, self.plm_axis.len());
        for section in [
            &self.band_centers_um,
            &self.band_fwhm_um,
            &self.conc_axis,
            &self.plm_axis,
            &self.log_ratio,
        ] {
            for v in section.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    /// Decodes a blob produced by [`Self::to_bytes`], validating header
    /// consistency, axis ordering and table invariants.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SpectralError> {
        let mut cursor = bytes;
        let mut magic = [0_u8; 8];
        read_exact(&mut cursor, &mut magic, "magic")?;
        if &magic != Self::MAGIC {
            return Err(SpectralError::BlobFormat("bad magic".into()));
        }
        let bands = read_u32(&mut cursor, "band count")? as usize;
        let n_conc = read_u32(&mut cursor, "conc axis length")? as usize;
        let n_plm = read_u32(&mut cursor, "plm axis length")? as usize;
        if bands == 0 || n_conc < 2 || n_plm < 2 {
            return Err(SpectralError::BlobFormat("degenerate table shape".into()));
        }
        let table_len = bands
            .checked_mul(n_conc)
            .and_then(|v| v.checked_mul(n_plm))
            .ok_or_else(|| SpectralError::BlobFormat("table size overflow".into()))?;
        let expected = 8 * (2 * bands + n_conc + n_plm + table_len);
        if cursor.len() != expected {
            return Err(SpectralError::BlobFormat(format!(
                "payload length {} does not match header (expected {expected})",
                cursor.len()
            )));
        }
        let band_centers_um = read_f64s(&mut cursor, bands)?;
        let band_fwhm_um = read_f64s(&mut cursor, bands)?;
        let conc_axis = read_f64s(&mut cursor, n_conc)?;
        let plm_axis = read_f64s(&mut cursor, n_plm)?;
        let log_ratio = read_f64s(&mut cursor, table_len)?;
        validate_axes(&conc_axis, &plm_axis)
            .map_err(|e| SpectralError::BlobFormat(e.to_string()))?;
        if log_ratio.iter().any(|v| !v.is_finite() || *v > 0.0) {
            return Err(SpectralError::BlobFormat(
                "log ratios must be finite and <= 0".into(),
            ));
        }
        if band_fwhm_um.iter().any(|v| !(*v > 0.0)) {
            return Err(SpectralError::BlobFormat("non-positive band FWHM".into()));
        }
        Ok(Self {
            band_centers_um,
            band_fwhm_um,
            conc_axis,
            plm_axis,
            log_ratio,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SpectralError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, SpectralError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(cursor: &mut &[u8], out: &mut [u8], what: &str) -> Result<(), SpectralError> {
    if cursor.len() < out.len() {
        return Err(SpectralError::BlobFormat(format!("truncated at {what}")));
    }
    out.copy_from_slice(&cursor[..out.len()]);
    *cursor = &cursor[out.len()..];
    Ok(())
}

fn read_u32(cursor: &mut &[u8], what: &str) -> Result<u32, SpectralError> {
    let mut b = [0_u8; 4];
    read_exact(cursor, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(cursor: &mut &[u8], count: usize) -> Result<Vec<f64>, SpectralError> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0_u8; 8];
    for _ in 0..count {
        read_exact(cursor, &mut b, "f64 payload")?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Bracketing interval and interpolation weight for `x` on a sorted
/// axis. Values beyond the last node clamp to it; exact node hits return
/// weight 0 against the node itself.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    if x <= axis[0] {
        return (0, 0, 0.0);
    }
    let hi = axis.partition_point(|&v| v <= x);
    let lo = hi - 1;
    if axis[lo] == x {
        return (lo, lo, 0.0);
    }
    let t = (x - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::srf::WavelengthGrid;
    use crate::spectral::transmittance::synthetic_pair_on;
    use approx::assert_relative_eq;

    fn test_pair() -> TransmittancePair {
        // Coarser grid spanning both SWIR manifolds keeps tests quick.
        synthetic_pair_on(WavelengthGrid::new(1.4, 0.00025, 4601).unwrap())
    }

    fn test_bands() -> Vec<BandSrf> {
        vec![
            BandSrf::new(1.55, 0.0085).unwrap(), // clean window
            BandSrf::new(1.67, 0.0085).unwrap(), // methane manifold
            BandSrf::new(2.30, 0.0085).unwrap(), // strong methane manifold
        ]
    }

    fn test_lut() -> MethaneLut {
        build_lut(
            &test_pair(),
            &test_bands(),
            default_conc_axis(),
            default_plm_axis(),
        )
        .unwrap()
    }

    #[test]
    fn path_multiplier_examples() {
        assert_relative_eq!(path_length_multiplier(0.0, 0.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(path_length_multiplier(60.0, 0.0).unwrap(), 3.0, epsilon = 1e-9);
        assert_relative_eq!(
            path_length_multiplier(45.0, 45.0).unwrap(),
            2.0 * 2.0_f64.sqrt(),
            epsilon = 1e-9
        );
        assert!(path_length_multiplier(90.0, 0.0).is_err());
        assert!(path_length_multiplier(-1.0, 0.0).is_err());
    }

    #[test]
    fn zero_concentration_row_is_exactly_zero() {
        let lut = test_lut();
        for band in 0..lut.bands() {
            for p in 0..lut.plm_axis().len() {
                assert_eq!(lut.log_ratio_at(band, 0, p), 0.0);
            }
        }
        let r = lut.query_ratio(0.0, 3.7).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn direct_summation_oracle_without_truncation() {
        // Recompute entry (band, conc=100, plm=1) by summing the
        // untruncated response over the full grid.
        let pair = test_pair();
        let srf = BandSrf::new(2.30, 0.0085).unwrap();
        let lut = build_lut(
            &pair,
            &[srf],
            default_conc_axis(),
            default_plm_axis(),
        )
        .unwrap();

        let conc = 100.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..pair.grid.count {
            let lambda = pair.grid.wavelength(i);
            let w = srf.response(lambda);
            let s = pair.t_std[i];
            let rho = pair.t_ch4_150[i] / s;
            num += w * s * rho.powf(conc / REFERENCE_CH4_PPM_M);
            den += w * s;
        }
        let expected = (num / den).ln();
        let got = lut.log_ratio_at(0, 1, 0);
        assert!(expected < 0.0);
        assert_relative_eq!(got, expected, max_relative = 1e-6);
    }

    #[test]
    fn monotone_in_concentration_on_absorption_band() {
        let lut = test_lut();
        // band 2 = 2.30 um manifold; conc indices: 1000 -> 10, 9000 -> 18.
        let at_1000 = lut.log_ratio_at(2, 10, 0);
        let at_9000 = lut.log_ratio_at(2, 18, 0);
        assert!(at_9000 < at_1000 && at_1000 < 0.0, "{at_9000} < {at_1000} < 0");
        // Full-axis monotonicity for every band and path multiplier.
        for band in 0..lut.bands() {
            for p in 0..lut.plm_axis().len() {
                for c in 1..lut.conc_axis().len() {
                    assert!(
                        lut.log_ratio_at(band, c, p) <= lut.log_ratio_at(band, c - 1, p) + 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn query_exact_at_grid_nodes() {
        let lut = test_lut();
        let r = lut.query_ratio(1000.0, 2.0).unwrap();
        for band in 0..lut.bands() {
            assert_eq!(r[band], lut.log_ratio_at(band, 10, 1).exp());
        }
    }

    #[test]
    fn query_midpoint_is_geometric_mean() {
        let lut = test_lut();
        let lo = lut.query_ratio(100.0, 1.0).unwrap();
        let hi = lut.query_ratio(200.0, 1.0).unwrap();
        let mid = lut.query_ratio(150.0, 1.0).unwrap();
        for b in 0..lut.bands() {
            assert_relative_eq!(mid[b], (lo[b] * hi[b]).sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn query_clamps_beyond_axis_maxima() {
        let lut = test_lut();
        assert_eq!(
            lut.query_ratio(1e9, 1.0).unwrap(),
            lut.query_ratio(100_000.0, 1.0).unwrap()
        );
        assert_eq!(
            lut.query_ratio(500.0, 1e4).unwrap(),
            lut.query_ratio(500.0, 100.0).unwrap()
        );
        assert!(lut.query_ratio(-1.0, 1.0).is_err());
        assert!(lut.query_ratio(500.0, 0.5).is_err());
    }

    #[test]
    fn ratio_multiplicativity_under_linearization() {
        let lut = test_lut();
        for (x, p) in [(100.0, 2.0), (100.0, 5.0), (1000.0, 3.0), (200.0, 4.0)] {
            let via_plm = lut.query_ratio(x, p).unwrap();
            let via_conc = lut.query_ratio(x * p, 1.0).unwrap();
            for b in 0..lut.bands() {
                assert_relative_eq!(via_plm[b], via_conc[b], max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let pair = test_pair();
        let lut1 = build_lut(&pair, &test_bands(), default_conc_axis(), default_plm_axis()).unwrap();
        let lut2 = build_lut(&pair, &test_bands(), default_conc_axis(), default_plm_axis()).unwrap();
        assert_eq!(lut1, lut2);
        assert_eq!(lut1.to_bytes(), lut2.to_bytes());
    }

    #[test]
    fn blob_roundtrip_and_validation() {
        let lut = test_lut();
        let bytes = lut.to_bytes();
        let back = MethaneLut::from_bytes(&bytes).unwrap();
        assert_eq!(lut, back);

        assert!(MethaneLut::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(MethaneLut::from_bytes(&bad_magic).is_err());
        // Corrupt a table entry to a positive value.
        let mut bad_entry = bytes.clone();
        let off = bad_entry.len() - 8;
        bad_entry[off..].copy_from_slice(&1.0_f64.to_le_bytes());
        assert!(MethaneLut::from_bytes(&bad_entry).is_err());
    }

    #[test]
    fn axis_validation() {
        let pair = test_pair();
        let bands = test_bands();
        assert!(build_lut(&pair, &bands, vec![100.0, 200.0], vec![1.0, 2.0]).is_err());
        assert!(build_lut(&pair, &bands, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(build_lut(&pair, &bands, vec![0.0, 100.0], vec![0.5, 2.0]).is_err());
    }

    #[test]
    fn band_outside_grid_is_reported() {
        let pair = synthetic_pair_on(WavelengthGrid::new(2.0, 0.00025, 1000).unwrap());
        let res = build_lut(
            &pair,
            &[BandSrf::new(1.67, 0.0085).unwrap()],
            default_conc_axis(),
            default_plm_axis(),
        );
        assert!(matches!(
            res,
            Err(SpectralError::BandOutsideGrid { center_um }) if center_um == 1.67
        ));
    }
}
