//! Synthetic methane plume generation, radiative-transfer injection,
//! retrieval and evaluation for hyperspectral imagers.
//!
//! The crate covers the full synthetic pipeline:
//!
//! - [`spectral`]: transmittance spectra, Gaussian band responses and the
//!   Beer-Lambert transmittance-ratio lookup table.
//! - [`radiance`]: radiance cubes, solar-blackbody normalization,
//!   cross-track correction and band exclusion.
//! - [`sim`]: Lagrangian puff plume simulation.
//! - [`inject`]: scaling unit plumes to target emission rates and folding
//!   the resulting absorption into radiance cubes.
//! - [`loss`]: slot assignment and the training-objective arithmetic.
//! - [`retrieval`]: matched-filter baseline and prediction post-processing.
//! - [`granule`]: strided tile inference, Hanning blending, candidate
//!   consolidation and final filters.
//! - [`specfit`]: physics-based spectral vetting of detected plumes.
//! - [`metrics`]: stratified detection/quantification/localization metrics.
//! - [`io`], [`config`], [`split`], [`synth`]: file formats, run
//!   configuration, dataset splitting and synthetic fixtures.

pub mod config;
pub mod geom;
pub mod granule;
pub mod grid;
pub mod hungarian;
pub mod inject;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod morph;
pub mod noise;
pub mod radiance;
pub mod retrieval;
pub mod rng;
pub mod sim;
pub mod specfit;
pub mod spectral;
pub mod split;
pub mod synth;

pub use grid::{Grid, MaskGrid};
pub use radiance::RadianceCube;
pub use spectral::{BandSrf, MethaneLut, TransmittancePair, WavelengthGrid};
