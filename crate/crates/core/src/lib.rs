//! Canopy height mapping from sparse spaceborne LiDAR footprints fused with
//! multispectral raster imagery.
//!
//! The crate is organised as a pipeline:
//!
//! - [`geo`]: raster grids, affine georeferencing, channel statistics, tiling
//!   and the `CHMR` raster file format.
//! - [`lidar`]: photon denoising, canopy step classification, waveform
//!   simulation, relative-height extraction and footprint quality filtering.
//! - [`fusion`]: height harmonisation, footprint rasterisation and training
//!   sample assembly.
//! - [`net`]: a small CPU tensor engine and the pyramid receptive-field
//!   depthwise-separable regressor with exact backward passes.
//! - [`train`]: masked loss, Adam, clipping, learning-rate schedule and the
//!   training loop.
//! - [`eval`]: metrics, cross-validation harnesses, map prediction and the
//!   giant-tree potential map.
//! - [`synth`]: deterministic synthetic scenes and sensor simulators.

pub mod eval;
pub mod fusion;
pub mod geo;
pub mod lidar;
pub mod net;
pub mod synth;
pub mod train;
