//! Georeferenced raster grids.
//!
//! A [`RasterGrid`] stores `bands × height × width` float32 values (band-major,
//! then row-major) together with the [`AffineTransform`] that places pixel
//! corners in a projected world coordinate system.

mod format;
mod stats;
mod transform;

pub use format::{decode_raster, encode_raster, read_raster, write_raster, CHMR_MAGIC, CHMR_VERSION};
pub use stats::{compute_channel_stats, normalize, ChannelStats};
pub use transform::{world_to_pixel, AffineTransform};

use thiserror::Error;

/// Nodata sentinel used when none is specified.
pub const DEFAULT_NODATA: f32 = -9999.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("affine transform is not invertible (determinant {0:e})")]
    SingularTransform(f64),
    #[error("raster dimensions must be at least 1 (got {width}x{height}x{bands})")]
    EmptyRaster {
        width: usize,
        height: usize,
        bands: usize,
    },
    #[error("raster data length {actual} does not match {bands}x{height}x{width} = {expected}")]
    DataLength {
        bands: usize,
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at index {index} that is not the nodata sentinel")]
    NonFiniteValue { index: usize, value: f32 },
    #[error("band {band} is degenerate: {reason}")]
    DegenerateBand { band: usize, reason: String },
    #[error("band count mismatch: expected {expected}, got {actual}")]
    BandMismatch { expected: usize, actual: usize },
    #[error("mask length {actual} does not match pixel count {expected}")]
    MaskLength { expected: usize, actual: usize },
    #[error("patch size {patch} does not fit in a {width}x{height} raster")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid tiling parameters: patch {patch}, step {step}")]
    InvalidTiling { patch: usize, step: usize },
    #[error("band index {band} out of range for a raster with {bands} bands")]
    BandIndex { band: usize, bands: usize },
    #[error("bad magic {0:?}, expected \"CHMR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported raster format version {0}")]
    VersionMismatch(u32),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("raster header dimensions overflow: {width}x{height}x{bands}")]
    DimensionOverflow { width: u32, height: u32, bands: u32 },
    #[error("{0} unexpected trailing bytes after raster payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeoError>;

/// Multi-band float32 raster with georeferencing and a nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    bands: usize,
    transform: AffineTransform,
    nodata: f32,
    data: Vec<f32>,
}

impl RasterGrid {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        transform: AffineTransform,
        nodata: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(GeoError::EmptyRaster {
                width,
                height,
                bands,
            });
        }
        let expected = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(bands))
            .ok_or(GeoError::EmptyRaster {
                width,
                height,
                bands,
            })?;
        if data.len() != expected {
            return Err(GeoError::DataLength {
                bands,
                height,
                width,
                expected,
                actual: data.len(),
            });
        }
        let grid = RasterGrid {
            width,
            height,
            bands,
            transform,
            nodata,
            data,
        };
        if let Some((index, &value)) = grid
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() && !grid.is_nodata(**v))
        {
            return Err(GeoError::NonFiniteValue { index, value });
        }
        Ok(grid)
    }

    /// A raster filled with a constant value.
    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        transform: AffineTransform,
        nodata: f32,
        value: f32,
    ) -> Result<Self> {
        let len = width.saturating_mul(height).saturating_mul(bands);
        Self::new(width, height, bands, transform, nodata, vec![value; len])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn transform(&self) -> &AffineTransform {
        &self.transform
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata || (self.nodata.is_nan() && v.is_nan())
    }

    /// Values of one band, row-major.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// Sets a value. Non-finite values are stored as nodata.
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f32) {
        let v = if value.is_finite() { value } else { self.nodata };
        self.data[(band * self.height + row) * self.width + col] = v;
    }

    /// True when the pixel is nodata in any band.
    pub fn pixel_is_nodata(&self, row: usize, col: usize) -> bool {
        (0..self.bands).any(|b| self.is_nodata(self.get(b, row, col)))
    }

    /// Same dimensions and georeferencing (band count may differ).
    pub fn same_grid(&self, other: &RasterGrid) -> bool {
        self.width == other.width && self.height == other.height && self.transform == other.transform
    }

    /// New raster holding the listed bands, in the listed order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<RasterGrid> {
        let n = self.pixel_count();
        let mut data = Vec::with_capacity(bands.len() * n);
        for &b in bands {
            if b >= self.bands {
                return Err(GeoError::BandIndex {
                    band: b,
                    bands: self.bands,
                });
            }
            data.extend_from_slice(self.band(b));
        }
        RasterGrid::new(
            self.width,
            self.height,
            bands.len(),
            self.transform,
            self.nodata,
            data,
        )
    }
}

/// Origins along one axis: the stride lattice plus a clamped final origin.
fn axis_origins(len: usize, patch: usize, step: usize) -> Vec<usize> {
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Patch origins `(col0, row0)` covering a `width × height` grid.
pub fn tile_origins(width: usize, height: usize, patch: usize, step: usize) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || step == 0 || step > patch {
        return Err(GeoError::InvalidTiling { patch, step });
    }
    if patch > width || patch > height {
        return Err(GeoError::PatchTooLarge {
            patch,
            width,
            height,
        });
    }
    let cols = axis_origins(width, patch, step);
    let rows = axis_origins(height, patch, step);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (c, r)))
        .collect())
}

/// Row-major patch origins for `r`. The final row/column origin is clamped to
/// the raster edge so every pixel lies in at least one window. A step larger
/// than the patch would leave gaps and is rejected.
pub fn tile_patches(r: &RasterGrid, patch: usize, step: usize) -> Result<Vec<(usize, usize)>> {
    tile_origins(r.width(), r.height(), patch, step)
}
