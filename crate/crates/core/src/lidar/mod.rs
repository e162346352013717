//! Footprint-level LiDAR processing.
//!
//! Photon-counting tracks are denoised with DBSCAN in the along-track /
//! elevation plane and split into fixed along-track steps whose elevation
//! range gives a canopy height. Full-waveform footprints are simulated from
//! height-normalised point clouds and summarised as relative-height (RH)
//! percentiles. Footprint records carry a quality flag; only flag 1 is kept.

mod footprint;
mod photon;
mod waveform;

pub use footprint::{
    filter_quality, read_footprints_csv, write_footprints_csv, FootprintRecord, Source, MAX_CANOPY_HEIGHT,
};
pub use photon::{
    classify_canopy_steps, dbscan_label, read_photons_csv, write_photons_csv, CanopyStep, PhotonEvent,
    PhotonLabel, DEFAULT_EPS, DEFAULT_MIN_PTS,
};
pub use waveform::{
    extract_rh, simulate_waveform, NormalizedPoint, RHProfile, Waveform, DEFAULT_BIN_SIZE, DEFAULT_DIAMETER,
    DEFAULT_SIGMA_BINS, RH_PERCENTILES,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite or out-of-range coordinate at index {index}: {what}")]
    InvalidCoordinate { index: usize, what: String },
    #[error("no points within {radius} m of footprint centre ({x}, {y})")]
    EmptyFootprint { x: f64, y: f64, radius: f64 },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("canopy height {0} m outside [0, 150]")]
    InvalidHeight(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LidarError>;
