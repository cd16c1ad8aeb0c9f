//! Transmittance spectra, Gaussian band responses and the Beer-Lambert
//! transmittance-ratio lookup table.

mod lut;
mod srf;
mod transmittance;

pub use lut::{
    build_lut, default_conc_axis, default_plm_axis, path_length_multiplier, MethaneLut,
};
pub use srf::{
    load_srf_csv, parse_srf_csv, srf_csv_string, synthetic_instrument_bands, BandSrf,
    WavelengthGrid,
};
pub use transmittance::{
    parse_transmittance_text, synthetic_pair, synthetic_pair_on, transmittance_text_string,
    TransmittancePair,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("wavelength grid requires step > 0 and at least 2 samples")]
    BadGrid,
    #[error("band centered at {center_um} um falls outside the wavelength grid")]
    BandOutsideGrid { center_um: f64 },
    #[error("band FWHM must be positive, got {fwhm_um}")]
    BadFwhm { fwhm_um: f64 },
    #[error("zenith angle {angle_deg} deg outside [0, 90)")]
    InvalidZenith { angle_deg: f64 },
    #[error("concentration must be non-negative, got {conc}")]
    NegativeConcentration { conc: f64 },
    #[error("path-length multiplier {plm} below axis minimum {min}")]
    PlmBelowAxis { plm: f64, min: f64 },
    #[error("axis must be sorted strictly ascending")]
    AxisNotSorted,
    #[error("concentration axis must start at 0")]
    AxisMissingZero,
    #[error("path-length axis values must be >= 1")]
    AxisBelowOne,
    #[error("lookup table needs at least one band and 2x2 axes")]
    EmptyTable,
    #[error("transmittance file line {line}: {reason}")]
    TransmittanceParse { line: usize, reason: String },
    #[error("transmittance grids of the two atmospheres do not match")]
    GridMismatch,
    #[error("methane transmittance exceeds standard transmittance at sample {index}")]
    RatioAboveOne { index: usize },
    #[error("SRF file line {line}: {reason}")]
    SrfParse { line: usize, reason: String },
    #[error("lookup table blob: {0}")]
    BlobFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
