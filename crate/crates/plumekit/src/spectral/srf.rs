//! Wavelength grids and Gaussian spectral response functions.

use std::path::Path;

use super::SpectralError;

/// Uniform wavelength sampling in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthGrid {
    pub start_um: f64,
    pub step_um: f64,
    pub count: usize,
}

impl WavelengthGrid {
    pub fn new(start_um: f64, step_um: f64, count: usize) -> Result<Self, SpectralError> {
        if step_um <= 0.0 || count < 2 {
            return Err(SpectralError::BadGrid);
        }
        Ok(Self {
            start_um,
            step_um,
            count,
        })
    }

    #[inline]
    pub fn wavelength(&self, index: usize) -> f64 {
        self.start_um + self.step_um * index as f64
    }

    pub fn end_um(&self) -> f64 {
        self.wavelength(self.count - 1)
    }

    /// Indices covering [lo, hi], clamped to the grid; `None` when the
    /// interval lies entirely outside.
    pub fn index_range(&self, lo_um: f64, hi_um: f64) -> Option<(usize, usize)> {
        if hi_um < self.start_um || lo_um > self.end_um() {
            return None;
        }
        let lo = ((lo_um - self.start_um) / self.step_um).ceil().max(0.0) as usize;
        let hi = (((hi_um - self.start_um) / self.step_um).floor() as usize).min(self.count - 1);
        (lo <= hi).then_some((lo, hi))
    }
}

/// Gaussian band response parameterized by center and full width at half
/// maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSrf {
    pub center_um: f64,
    pub fwhm_um: f64,
}

const FWHM_TO_SIGMA: f64 = 0.42466090014400953; // 1 / (2 sqrt(2 ln 2))

impl BandSrf {
    pub fn new(center_um: f64, fwhm_um: f64) -> Result<Self, SpectralError> {
        if fwhm_um <= 0.0 || !fwhm_um.is_finite() {
            return Err(SpectralError::BadFwhm { fwhm_um });
        }
        Ok(Self { center_um, fwhm_um })
    }

    #[inline]
    pub fn sigma_um(&self) -> f64 {
        self.fwhm_um * FWHM_TO_SIGMA
    }

    /// Unnormalized Gaussian response at wavelength `lambda_um`.
    #[inline]
    pub fn response(&self, lambda_um: f64) -> f64 {
        let z = (lambda_um - self.center_um) / self.sigma_um();
        (-0.5 * z * z).exp()
    }

    /// Response sampled on `grid`, truncated at +-6 sigma and normalized
    /// to unit sum. Returns the first covered grid index and the weights.
    /// The truncated tail mass (~2e-9) keeps band integrals within 1e-6
    /// of the untruncated sum.
    ///
    /// Errors if the truncated support leaves the grid, naming the band.
    pub fn sampled_weights(
        &self,
        grid: &WavelengthGrid,
    ) -> Result<(usize, Vec<f64>), SpectralError> {
        let half = 6.0 * self.sigma_um();
        let lo = self.center_um - half;
        let hi = self.center_um + half;
        if lo < grid.start_um || hi > grid.end_um() {
            return Err(SpectralError::BandOutsideGrid {
                center_um: self.center_um,
            });
        }
        let (i0, i1) = grid
            .index_range(lo, hi)
            .ok_or(SpectralError::BandOutsideGrid {
                center_um: self.center_um,
            })?;
        let mut weights: Vec<f64> = (i0..=i1).map(|i| self.response(grid.wavelength(i))).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok((i0, weights))
    }
}

/// Synthetic pushbroom-imager band set: uniformly spaced Gaussian bands
/// with a constant FWHM across `[lo_um, hi_um]`.
pub fn synthetic_instrument_bands(lo_um: f64, hi_um: f64, count: usize) -> Vec<BandSrf> {
    let step = (hi_um - lo_um) / (count - 1) as f64;
    (0..count)
        .map(|i| BandSrf {
            center_um: lo_um + step * i as f64,
            fwhm_um: 0.0085,
        })
        .collect()
}

/// Parses a band-response CSV: one `center_um,fwhm_um` row per band.
/// Blank lines and `#` comments are skipped; a single non-numeric header
/// row is tolerated.
pub fn parse_srf_csv(text: &str) -> Result<Vec<BandSrf>, SpectralError> {
    let mut bands = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(SpectralError::SrfParse {
                line: line_no,
                reason: "expected two comma-separated columns".into(),
            });
        };
        if parts.next().is_some() {
            return Err(SpectralError::SrfParse {
                line: line_no,
                reason: "expected exactly two columns".into(),
            });
        }
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(center), Ok(fwhm)) => {
                if !center.is_finite() || center <= 0.0 {
                    return Err(SpectralError::SrfParse {
                        line: line_no,
                        reason: format!("bad band center {center}"),
                    });
                }
                bands.push(BandSrf::new(center, fwhm).map_err(|_| SpectralError::SrfParse {
                    line: line_no,
                    reason: format!("bad FWHM {fwhm}"),
                })?);
            }
            _ if bands.is_empty() && line_no == 1 => continue, // header row
            _ => {
                return Err(SpectralError::SrfParse {
                    line: line_no,
                    reason: "not a numeric row".into(),
                })
            }
        }
    }
    if bands.is_empty() {
        return Err(SpectralError::SrfParse {
            line: 0,
            reason: "no bands found".into(),
        });
    }
    Ok(bands)
}

pub fn load_srf_csv(path: &Path) -> Result<Vec<BandSrf>, SpectralError> {
    parse_srf_csv(&std::fs::read_to_string(path)?)
}

pub fn srf_csv_string(bands: &[BandSrf]) -> String {
    let mut out = String::from("center_um,fwhm_um\n");
    for b in bands {
        out.push_str(&format!("{:.9},{:.9}\n", b.center_um, b.fwhm_um));
    }
    out
}
