//! Paired atmospheric transmittance spectra and their text format.
//!
//! The pair holds a background atmosphere spectrum and the same
//! atmosphere with a 150 ppm-m methane column added. Real tables are
//! loaded from two-column text files; a bundled synthetic line-by-line
//! spectrum backs tests and the self-contained CLI path.

use std::path::Path;

use super::srf::WavelengthGrid;
use super::SpectralError;

/// Background and methane-enhanced transmittance sampled on a common
/// wavelength grid. The methane spectrum corresponds to a 150 ppm-m
/// column addition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmittancePair {
    pub grid: WavelengthGrid,
    pub t_std: Vec<f64>,
    pub t_ch4_150: Vec<f64>,
}

/// Column concentration (ppm-m) of the enhanced reference atmosphere.
pub const REFERENCE_CH4_PPM_M: f64 = 150.0;

impl TransmittancePair {
    pub fn new(
        grid: WavelengthGrid,
        t_std: Vec<f64>,
        t_ch4_150: Vec<f64>,
    ) -> Result<Self, SpectralError> {
        if t_std.len() != grid.count || t_ch4_150.len() != grid.count {
            return Err(SpectralError::BadGrid);
        }
        for (i, (&s, &m)) in t_std.iter().zip(&t_ch4_150).enumerate() {
            if !(s > 0.0 && s <= 1.0 && m > 0.0 && m <= 1.0) {
                return Err(SpectralError::TransmittanceParse {
                    line: i + 1,
                    reason: format!("transmittance outside (0, 1]: std={s}, ch4={m}"),
                });
            }
            if m > s + 1e-9 {
                return Err(SpectralError::RatioAboveOne { index: i });
            }
        }
        Ok(Self {
            grid,
            t_std,
            t_ch4_150,
        })
    }

    /// Loads the two atmospheres from text files and checks they share a
    /// wavelength grid.
    pub fn from_files(std_path: &Path, ch4_path: &Path) -> Result<Self, SpectralError> {
        let (grid_s, t_std) = parse_transmittance_text(&std::fs::read_to_string(std_path)?)?;
        let (grid_m, t_ch4) = parse_transmittance_text(&std::fs::read_to_string(ch4_path)?)?;
        if grid_s != grid_m {
            return Err(SpectralError::GridMismatch);
        }
        Self::new(grid_s, t_std, t_ch4)
    }
}

/// Parses a plain-text transmittance table: one `wavelength_um
/// transmittance` pair per line, whitespace separated, `#` comments
/// allowed. The wavelength column must be uniformly spaced ascending.
pub fn parse_transmittance_text(
    text: &str,
) -> Result<(WavelengthGrid, Vec<f64>), SpectralError> {
    let mut lambdas = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(SpectralError::TransmittanceParse {
                line: line_no,
                reason: "expected two columns".into(),
            });
        };
        if parts.next().is_some() {
            return Err(SpectralError::TransmittanceParse {
                line: line_no,
                reason: "expected exactly two columns".into(),
            });
        }
        let lambda: f64 = a.parse().map_err(|_| SpectralError::TransmittanceParse {
            line: line_no,
            reason: format!("bad wavelength {a:?}"),
        })?;
        let t: f64 = b.parse().map_err(|_| SpectralError::TransmittanceParse {
            line: line_no,
            reason: format!("bad transmittance {b:?}"),
        })?;
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(SpectralError::TransmittanceParse {
                line: line_no,
                reason: format!("bad wavelength {lambda}"),
            });
        }
        if !(t > 0.0 && t <= 1.0) {
            return Err(SpectralError::TransmittanceParse {
                line: line_no,
                reason: format!("transmittance {t} outside (0, 1]"),
            });
        }
        lambdas.push(lambda);
        values.push(t);
    }
    if lambdas.len() < 2 {
        return Err(SpectralError::TransmittanceParse {
            line: 0,
            reason: "need at least two samples".into(),
        });
    }
    let step = lambdas[1] - lambdas[0];
    if step <= 0.0 {
        return Err(SpectralError::TransmittanceParse {
            line: 2,
            reason: "wavelengths must ascend".into(),
        });
    }
    for i in 2..lambdas.len() {
        let d = lambdas[i] - lambdas[i - 1];
        if (d - step).abs() > 1e-6 * step.max(1e-12) {
            return Err(SpectralError::TransmittanceParse {
                line: i + 1,
                reason: "non-uniform wavelength step".into(),
            });
        }
    }
    Ok((
        WavelengthGrid::new(lambdas[0], step, lambdas.len())?,
        values,
    ))
}

pub fn transmittance_text_string(grid: &WavelengthGrid, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{:.6} {:.9e}\n", grid.wavelength(i), v));
    }
    out
}

// --- bundled synthetic spectrum ----------------------------------------

struct LineManifold {
    center_um: f64,
    half_width_um: f64,
    lines: usize,
    peak_strength: f64,
    gamma_um: f64,
}

// Golden-ratio comb: deterministic quasi-random line positions and
// strengths inside the manifold. Lines are truncated (with level
// subtraction, so the profile stays continuous) at 100 half-widths;
// windows beyond that distance are exactly absorption-free.
fn manifold_sum(lambda: f64, m: &LineManifold) -> f64 {
    const PHI: f64 = 0.6180339887498949;
    const SQRT2_FRAC: f64 = 0.41421356237309515;
    const CUT: f64 = 100.0;
    let cut_level = 1.0 / (1.0 + CUT * CUT);
    if (lambda - m.center_um).abs() > m.half_width_um + CUT * m.gamma_um {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m.lines {
        let u = (i as f64 * PHI).fract();
        let pos = m.center_um + m.half_width_um * (2.0 * u - 1.0);
        let s = m.peak_strength * (0.4 + 0.6 * (i as f64 * SQRT2_FRAC).fract());
        let x = (lambda - pos) / m.gamma_um;
        total += s * (1.0 / (1.0 + x * x) - cut_level).max(0.0);
    }
    total
}

/// Methane absorption coefficient per ppm-m at `lambda` for the bundled
/// synthetic spectrum: Lorentzian line combs at the three SWIR methane
/// manifolds.
fn synthetic_ch4_coefficient(lambda: f64) -> f64 {
    const MANIFOLDS: [LineManifold; 3] = [
        LineManifold {
            center_um: 1.33,
            half_width_um: 0.040,
            lines: 20,
            peak_strength: 2.0e-5,
            gamma_um: 0.0005,
        },
        LineManifold {
            center_um: 1.67,
            half_width_um: 0.060,
            lines: 30,
            peak_strength: 6.0e-5,
            gamma_um: 0.0005,
        },
        LineManifold {
            center_um: 2.30,
            half_width_um: 0.120,
            lines: 48,
            peak_strength: 1.6e-4,
            gamma_um: 0.0006,
        },
    ];
    MANIFOLDS.iter().map(|m| manifold_sum(lambda, m)).sum()
}

/// Background optical depth: Rayleigh-like slope plus water-vapor-like
/// manifolds away from the methane windows. Appears in both atmospheres,
/// so it cancels in transmittance ratios.
fn synthetic_background_depth(lambda: f64) -> f64 {
    const WATER: [LineManifold; 2] = [
        LineManifold {
            center_um: 1.38,
            half_width_um: 0.055,
            lines: 30,
            peak_strength: 1.2,
            gamma_um: 0.0012,
        },
        LineManifold {
            center_um: 1.87,
            half_width_um: 0.070,
            lines: 30,
            peak_strength: 0.9,
            gamma_um: 0.0012,
        },
    ];
    let rayleigh = 0.12 * (0.55 / lambda).powi(4);
    0.05 + rayleigh + WATER.iter().map(|m| manifold_sum(lambda, m)).sum::<f64>()
}

/// Bundled synthetic line-by-line transmittance pair over 0.38-2.5 um at
/// the native 0.00025 um step.
pub fn synthetic_pair() -> TransmittancePair {
    synthetic_pair_on(WavelengthGrid::new(0.38, 0.00025, 8481).expect("valid grid"))
}

/// Synthetic pair sampled on an arbitrary grid (tests use coarser grids).
pub fn synthetic_pair_on(grid: WavelengthGrid) -> TransmittancePair {
    let mut t_std = Vec::with_capacity(grid.count);
    let mut t_ch4 = Vec::with_capacity(grid.count);
    for i in 0..grid.count {
        let lambda = grid.wavelength(i);
        let bg = (-synthetic_background_depth(lambda)).exp();
        let k = synthetic_ch4_coefficient(lambda);
        t_std.push(bg);
        t_ch4.push(bg * (-REFERENCE_CH4_PPM_M * k).exp());
    }
    TransmittancePair::new(grid, t_std, t_ch4).expect("synthetic spectrum is valid")
}
